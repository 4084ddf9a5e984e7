"""
CSV and JSON output of simulation runs.

timeline.csv  time_ms, job_id, served_rpcs, granted_tokens, record, demand, queue_depth
summary.csv   job_id, nodes, arrivals, served, queued, mean_throughput_rpc_s,
              baseline_throughput_rpc_s, delta_pct
frequency.csv interval_ms, aggregate_served, aggregate_throughput_rpc_s
"""
import csv
import json
import logging
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

from app.errors import ScenarioNotFoundError, ScenarioValidationError
from app.models.schemas import MetricsFrame, RunSummary

logger = logging.getLogger(__name__)

TIMELINE_COLUMNS = ["time_ms", "job_id", "served_rpcs", "granted_tokens", "record", "demand", "queue_depth"]
SUMMARY_COLUMNS = [
    "job_id",
    "nodes",
    "arrivals",
    "served",
    "queued",
    "mean_throughput_rpc_s",
    "baseline_throughput_rpc_s",
    "delta_pct",
]
FREQUENCY_COLUMNS = ["interval_ms", "aggregate_served", "aggregate_throughput_rpc_s"]


def format_tokens(value: Optional[Fraction]) -> str:
    if value is None:
        return ""
    if value.denominator == 1:
        return str(value.numerator)
    return f"{float(value):.3f}"


def _number(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.3f}"


def _writer(handle) -> csv.writer:
    return csv.writer(handle, lineterminator="\n")


def write_timeline_csv(frames: Iterable[MetricsFrame], job_ids: Sequence[str], path: Union[str, Path]) -> Path:
    """One row per (frame, job), frames in time order and jobs by id."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = _writer(handle)
        writer.writerow(TIMELINE_COLUMNS)
        for frame in frames:
            for job_id in job_ids:
                writer.writerow(
                    [
                        frame.time_ms,
                        job_id,
                        frame.served.get(job_id, 0),
                        format_tokens(frame.granted.get(job_id)),
                        frame.record.get(job_id, 0),
                        frame.demand.get(job_id, 0),
                        frame.queue_depth.get(job_id, 0),
                    ]
                )
    return path


def apply_baseline(summary: RunSummary, baseline: Dict[str, float]) -> RunSummary:
    """Fill baseline throughput and percentage gain/loss for jobs present in ``baseline``."""
    jobs = []
    for job in list(summary.jobs) + [summary.aggregate]:
        reference = baseline.get(job.job_id)
        update: Dict[str, Optional[float]] = {"baseline_throughput_rpc_s": reference}
        if reference:
            update["delta_pct"] = (job.mean_throughput_rpc_s - reference) / reference * 100
        jobs.append(job.model_copy(update=update))
    return summary.model_copy(update={"jobs": jobs[:-1], "aggregate": jobs[-1]})


def write_summary_csv(summary: RunSummary, path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = _writer(handle)
        writer.writerow(SUMMARY_COLUMNS)
        for job in list(summary.jobs) + [summary.aggregate]:
            writer.writerow(
                [
                    job.job_id,
                    job.nodes,
                    job.arrivals,
                    job.served,
                    job.queued,
                    _number(job.mean_throughput_rpc_s),
                    _number(job.baseline_throughput_rpc_s),
                    _number(job.delta_pct),
                ]
            )
    return path


def read_summary_csv(path: Union[str, Path]) -> Dict[str, float]:
    """Mean throughput per job id (``ALL`` included) from a summary.csv."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioNotFoundError(f"baseline not found: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        missing = {"job_id", "mean_throughput_rpc_s"} - set(reader.fieldnames or [])
        if missing:
            raise ScenarioValidationError(f"missing columns {', '.join(sorted(missing))}", path=str(path), line=1)
        baseline = {}
        for line, row in enumerate(reader, start=2):
            try:
                baseline[row["job_id"]] = float(row["mean_throughput_rpc_s"])
            except ValueError as e:
                raise ScenarioValidationError(f"bad throughput {row['mean_throughput_rpc_s']!r}", path=str(path), line=line) from e
    return baseline


def summary_document(summary: RunSummary) -> Dict:
    return summary.model_dump(mode="json")


def write_summary_json(summary: RunSummary, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(summary_document(summary), indent=2) + "\n", encoding="utf-8")
    return path


def write_frequency_csv(summaries: List[RunSummary], path: Union[str, Path]) -> Path:
    """Aggregate throughput per allocation interval, in interval order."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = _writer(handle)
        writer.writerow(FREQUENCY_COLUMNS)
        for summary in sorted(summaries, key=lambda s: s.interval_ms):
            writer.writerow(
                [summary.interval_ms, summary.aggregate.served, _number(summary.aggregate.mean_throughput_rpc_s)]
            )
    return path


def write_run(
    frames: Iterable[MetricsFrame],
    job_ids: Sequence[str],
    summary: RunSummary,
    out_dir: Union[str, Path],
    json_summary: bool = False,
) -> List[Path]:
    """Write timeline.csv and summary.csv (and summary.json) into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [
        write_timeline_csv(frames, job_ids, out_dir / "timeline.csv"),
        write_summary_csv(summary, out_dir / "summary.csv"),
    ]
    if json_summary:
        written.append(write_summary_json(summary, out_dir / "summary.json"))
    logger.info(f"Wrote {', '.join(path.name for path in written)} to {out_dir}")
    return written
