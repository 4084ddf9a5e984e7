#!/usr/bin/env python
"""
AdapTBF CLI - run scenarios, builtin reproductions and allocation benchmarks
"""
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import click
from pydantic import ValidationError

from app.config import DEFAULT_BENCH_TRIALS, DEFAULT_SEED, VERSION, configure_logging
from app.errors import (
    AdapTbfError,
    BuiltinNotFoundError,
    CliUsageError,
    ScenarioNotFoundError,
    ScenarioValidationError,
)
from app.models.schemas import ControllerMode, RunSummary, Scenario
from app.services.benchmark import bench_alloc, host_info, scaling_check
from app.services.simulator import RunResult, run, run_parallel_osts
from app.utils.reporting import (
    apply_baseline,
    read_summary_csv,
    summary_document,
    write_frequency_csv,
    write_run,
)
from app.utils.scenario_loader import dump_scenario, load_scenario
from app.utils.workload import builtin_scenarios

logger = logging.getLogger(__name__)

EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3

USAGE_ERRORS = (CliUsageError, ScenarioNotFoundError, ScenarioValidationError, BuiltinNotFoundError)


def _fail(error: Exception) -> None:
    """Log, print one greppable line and exit with the matching code."""
    if isinstance(error, USAGE_ERRORS):
        line, code = error.one_line(), EXIT_USAGE
    elif isinstance(error, AdapTbfError):
        line, code = error.one_line(), EXIT_RUNTIME
    elif isinstance(error, OSError):
        line, code = f"error[E_IO]: {' '.join(str(error).split())}", EXIT_RUNTIME
    else:
        line, code = f"error[E_RUNTIME]: {' '.join(str(error).split())}", EXIT_RUNTIME
    logger.error(line)
    click.echo(line, err=True)
    sys.exit(code)


def _with_overrides(
    scenario: Scenario,
    mode: Optional[str] = None,
    interval_ms: Optional[int] = None,
    seed: Optional[int] = None,
) -> Scenario:
    """Apply command-line overrides and re-validate."""
    document = scenario.model_dump()
    if mode is not None:
        if mode not in {m.value for m in ControllerMode}:
            raise CliUsageError(f"--mode must be one of adaptbf, static, nobw, got {mode!r}")
        document["controller"]["mode"] = mode
    if interval_ms is not None:
        document["controller"]["interval_ms"] = interval_ms
    if seed is not None:
        document["seed"] = seed
    try:
        return Scenario.model_validate(document)
    except ValidationError as e:
        error = e.errors()[0]
        key_path = ".".join(str(part) for part in error["loc"])
        raise ScenarioValidationError(error["msg"], path="<command line>", key_path=key_path or None) from e


def _echo_summary(summary: RunSummary) -> None:
    click.echo(f"{summary.scenario} [{summary.mode.value}, interval {summary.interval_ms} ms, {summary.duration_s}s]")
    click.echo("-" * 60)
    click.echo(f"{'job':<10} {'nodes':>6} {'arrivals':>9} {'served':>9} {'rpc/s':>10} {'delta %':>8}")
    for job in list(summary.jobs) + [summary.aggregate]:
        delta = "" if job.delta_pct is None else f"{job.delta_pct:+.1f}"
        click.echo(
            f"{job.job_id:<10} {job.nodes:>6} {job.arrivals:>9} {job.served:>9} "
            f"{job.mean_throughput_rpc_s:>10.1f} {delta:>8}"
        )


def _finish(
    result: RunResult, out_dir: Path, baseline: Optional[str], json_summary: bool
) -> RunSummary:
    summary = result.summary
    if baseline:
        summary = apply_baseline(summary, read_summary_csv(baseline))
    job_ids = sorted(job.job_id for job in result.scenario.jobs)
    write_run(result.frames, job_ids, summary, out_dir, json_summary=json_summary)
    return summary


def _run_scenario(
    scenario: Scenario,
    out_dir: Path,
    baseline: Optional[str] = None,
    json_summary: bool = False,
    parallel_osts: int = 1,
) -> List[RunSummary]:
    if parallel_osts > 1:
        results = run_parallel_osts(scenario, parallel_osts)
        return [
            _finish(result, out_dir / f"ost-{index}", baseline, json_summary) for index, result in enumerate(results)
        ]
    return [_finish(run(scenario), out_dir, baseline, json_summary)]


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging")
def cli(verbose: bool):
    """AdapTBF - adaptive token allocation on a simulated Lustre OST."""
    configure_logging(verbose)


@cli.command("run")
@click.argument("scenario_path")
@click.option("--mode", "-m", default=None, help="Controller: adaptbf, static or nobw", type=str)
@click.option("--interval-ms", default=None, help="Allocation interval in ms", type=int)
@click.option("--seed", default=None, help="Workload seed", type=int)
@click.option("--out-dir", "-o", default=None, help="Output directory", type=str)
@click.option("--baseline", default=None, help="summary.csv of a baseline run to compare against", type=str)
@click.option("--json", "json_summary", is_flag=True, help="Also write and print summary.json")
@click.option("--parallel-osts", default=1, help="Independent OST instances to run", type=int)
def run_command(
    scenario_path: str,
    mode: Optional[str],
    interval_ms: Optional[int],
    seed: Optional[int],
    out_dir: Optional[str],
    baseline: Optional[str],
    json_summary: bool,
    parallel_osts: int,
):
    """Simulate a scenario file and write timeline.csv / summary.csv."""
    try:
        if parallel_osts < 1:
            raise CliUsageError(f"--parallel-osts must be >= 1, got {parallel_osts}")
        scenario = _with_overrides(load_scenario(scenario_path), mode, interval_ms, seed)
        target = Path(out_dir or scenario.output.out_dir)
        json_summary = json_summary or scenario.output.json_summary
        summaries = _run_scenario(scenario, target, baseline, json_summary, parallel_osts)
        for summary in summaries:
            _echo_summary(summary)
            if json_summary:
                click.echo(json.dumps(summary_document(summary), indent=2))
        click.echo(f"Results written to {target}")
    except Exception as e:
        _fail(e)


@cli.command()
@click.argument("name")
@click.option("--mode", "-m", default=None, help="Controller: adaptbf, static or nobw", type=str)
@click.option("--seed", default=None, help="Workload seed", type=int)
@click.option("--out-dir", "-o", default=None, help="Output directory", type=str)
@click.option("--json", "json_summary", is_flag=True, help="Also write summary.json")
def builtin(name: str, mode: Optional[str], seed: Optional[int], out_dir: Optional[str], json_summary: bool):
    """Materialize a builtin scenario (sc1, sc2, sc3, sc4-freq) and run it."""
    try:
        scenarios = builtin_scenarios()
        if name not in scenarios:
            raise BuiltinNotFoundError(f"unknown builtin {name!r}; valid names: {', '.join(scenarios)}")
        scenario = scenarios[name]
        target = Path(out_dir) if out_dir else Path(scenario.output.out_dir) / name
        path = dump_scenario(scenario, target / f"{name}.yaml")
        logger.info(f"Materialized builtin {name} at {path}")
        scenario = _with_overrides(load_scenario(path), mode, None, seed)

        sweep = scenario.controller.sweep_interval_ms
        if not sweep:
            for summary in _run_scenario(scenario, target, json_summary=json_summary):
                _echo_summary(summary)
            click.echo(f"Results written to {target}")
            return

        summaries = []
        for interval_ms in sweep:
            variant = _with_overrides(scenario, interval_ms=interval_ms)
            summaries.extend(_run_scenario(variant, target / f"interval-{interval_ms}", json_summary=json_summary))
        write_frequency_csv(summaries, target / "frequency.csv")
        click.echo(f"{'interval_ms':>12} {'served':>10} {'rpc/s':>10}")
        for summary in summaries:
            click.echo(
                f"{summary.interval_ms:>12} {summary.aggregate.served:>10} "
                f"{summary.aggregate.mean_throughput_rpc_s:>10.1f}"
            )
        click.echo(f"Results written to {target}")
    except Exception as e:
        _fail(e)


@cli.command()
@click.option("--jobs", "-n", "n_jobs", default=1000, help="Active jobs per allocation step", type=int)
@click.option("--trials", "-t", default=DEFAULT_BENCH_TRIALS, help="Timed steps", type=int)
@click.option("--seed", default=DEFAULT_SEED, help="Seed for the synthetic inputs", type=int)
@click.option("--assert-budget-us", default=None, help="Fail when the mean step time exceeds this", type=int)
@click.option("--scaling/--no-scaling", default=True, help="Check per-job scaling against 100 jobs")
def bench(n_jobs: int, trials: int, seed: int, assert_budget_us: Optional[int], scaling: bool):
    """Time allocation steps on random active sets."""
    try:
        if n_jobs < 1:
            raise CliUsageError(f"--jobs must be >= 1, got {n_jobs}")
        if trials < 1:
            raise CliUsageError(f"--trials must be >= 1, got {trials}")

        for key, value in host_info().items():
            click.echo(f"{key:<18} {value}")
        click.echo("-" * 50)

        if scaling and n_jobs > 100:
            check = scaling_check(n_jobs, trials, seed)
            result = check.target
        else:
            check = None
            result = bench_alloc(n_jobs, trials, seed)

        click.echo(f"jobs               {result.n_jobs}")
        click.echo(f"trials             {result.trials}")
        click.echo(f"mean step          {result.mean_us:.1f} us")
        click.echo(f"p95 step           {result.p95_us:.1f} us")
        click.echo(f"max step           {result.max_us:.1f} us")
        click.echo(f"mean per job       {result.per_job_us:.3f} us")
        click.echo(f"input digest       {result.input_digest[:16]}")
        if check is not None:
            verdict = "ok" if check.within_limit else "NOT LINEAR"
            click.echo(f"per-job ratio      {check.ratio:.2f}x vs {check.base.n_jobs} jobs ({verdict})")

        if assert_budget_us is not None and result.mean_us > assert_budget_us:
            line = f"error[E_BUDGET]: mean step {result.mean_us:.1f} us exceeds budget {assert_budget_us} us"
            logger.error(line)
            click.echo(line, err=True)
            sys.exit(EXIT_BUDGET)
        if assert_budget_us is not None:
            click.echo(f"budget             {assert_budget_us} us (pass)")
    except Exception as e:
        _fail(e)


@cli.command()
def version():
    """Show version information."""
    click.echo(f"AdapTBF simulator v{VERSION}")


if __name__ == "__main__":
    cli()
