from enum import Enum
from fractions import Fraction
from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import (
    DEFAULT_BUCKET_DEPTH,
    DEFAULT_EVICTION_K,
    DEFAULT_INTERVAL_MS,
    DEFAULT_METRICS_INTERVAL_MS,
    DEFAULT_OUT_DIR,
    DEFAULT_RECLAIM_BOUND_MODE,
    DEFAULT_SEED,
)


class ControllerMode(str, Enum):
    """Bandwidth control applied to the storage target."""
    ADAPTBF = "adaptbf"
    STATIC = "static"
    NOBW = "nobw"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OstConfig(_Strict):
    """Storage target and its RPC service model."""
    max_token_rate: int = Field(1000, gt=0, description="T_i in tokens/second")
    thread_count: int = Field(4, ge=1, description="I/O threads serving RPCs")
    per_rpc_service_time_ms: float = Field(4.0, gt=0, description="Service time of one RPC")
    bucket_depth: int = Field(DEFAULT_BUCKET_DEPTH, ge=1, description="Token bucket depth cap")

    @property
    def service_time(self) -> Fraction:
        return Fraction(str(self.per_rpc_service_time_ms))


class ControllerConfig(_Strict):
    """Bandwidth controller settings."""
    mode: ControllerMode = ControllerMode.ADAPTBF
    interval_ms: int = Field(DEFAULT_INTERVAL_MS, ge=1, description="Observation period")
    eviction_k: int = Field(DEFAULT_EVICTION_K, ge=1, description="Idle intervals before a ledger entry is dropped")
    reclaim_bound_mode: Literal["pre", "post"] = DEFAULT_RECLAIM_BOUND_MODE
    sweep_interval_ms: List[int] = Field(default_factory=list, description="Intervals for a frequency sweep")


class ContinuousPattern(_Strict):
    """Steady stream of RPCs starting after a delay."""
    kind: Literal["continuous"] = "continuous"
    rate_rpc_s: float = Field(..., gt=0)
    start_delay_s: float = Field(0.0, ge=0)
    jitter: float = Field(0.0, ge=0, lt=1, description="Relative spacing jitter, e.g. 0.1 for +/-10%")


class PeriodicBurstPattern(_Strict):
    """Bursts of back-to-back RPCs at a fixed period."""
    kind: Literal["burst"] = "burst"
    burst_rpcs: int = Field(..., gt=0)
    interval_s: float = Field(..., gt=0)
    phase_s: float = Field(0.0, ge=0)


ProcessPattern = Annotated[Union[ContinuousPattern, PeriodicBurstPattern], Field(discriminator="kind")]


class JobSpec(_Strict):
    """A job and the I/O processes it runs against the storage target."""
    job_id: str = Field(..., min_length=1)
    nodes: int = Field(..., ge=1, description="Compute nodes; drives priority")
    start_s: float = Field(0.0, ge=0)
    processes: List[ProcessPattern] = Field(..., min_length=1)
    total_volume_tokens: Optional[int] = Field(None, gt=0, description="Job ends once this many RPCs were issued")


class OutputConfig(_Strict):
    out_dir: str = DEFAULT_OUT_DIR
    json_summary: bool = False
    trace: bool = False


class Scenario(_Strict):
    """A complete simulation: storage target, controller and workload."""
    name: str = "scenario"
    description: Optional[str] = None
    ost: OstConfig = Field(default_factory=OstConfig)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    jobs: List[JobSpec] = Field(default_factory=list)
    duration_s: float = Field(..., gt=0)
    time_scale: float = Field(1.0, gt=0, description="Multiplier applied to every time in the workload")
    seed: int = DEFAULT_SEED
    metrics_interval_ms: int = Field(DEFAULT_METRICS_INTERVAL_MS, ge=1)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _check_jobs(self) -> "Scenario":
        seen = set()
        for job in self.jobs:
            if job.job_id in seen:
                raise ValueError(f"duplicate job_id {job.job_id!r}")
            seen.add(job.job_id)
            if job.start_s >= self.duration_s:
                raise ValueError(f"job {job.job_id!r} starts at {job.start_s}s, after the {self.duration_s}s run ends")
        return self

    def scaled(self) -> "Scenario":
        """Copy with ``time_scale`` folded into every workload time."""
        if self.time_scale == 1.0:
            return self
        scale = self.time_scale
        jobs = []
        for job in self.jobs:
            processes = []
            for process in job.processes:
                if isinstance(process, ContinuousPattern):
                    processes.append(process.model_copy(update={"start_delay_s": process.start_delay_s * scale}))
                else:
                    processes.append(
                        process.model_copy(
                            update={"interval_s": process.interval_s * scale, "phase_s": process.phase_s * scale}
                        )
                    )
            jobs.append(job.model_copy(update={"start_s": job.start_s * scale, "processes": processes}))
        return self.model_copy(update={"jobs": jobs, "duration_s": self.duration_s * scale, "time_scale": 1.0})

    def job_nodes(self) -> Dict[str, int]:
        return {job.job_id: job.nodes for job in self.jobs}


class MetricsFrame(BaseModel):
    """Per-job counters over one metrics interval ending at ``time_ms``."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    time_ms: int
    served: Dict[str, int] = Field(default_factory=dict)
    granted: Dict[str, Optional[Fraction]] = Field(default_factory=dict)
    record: Dict[str, int] = Field(default_factory=dict)
    demand: Dict[str, int] = Field(default_factory=dict)
    queue_depth: Dict[str, int] = Field(default_factory=dict)
    fallback_depth: int = 0
    aggregate_served: int = 0


class JobSummary(BaseModel):
    job_id: str
    nodes: int = 0
    arrivals: int = 0
    served: int = 0
    queued: int = 0
    mean_throughput_rpc_s: float = 0.0
    baseline_throughput_rpc_s: Optional[float] = None
    delta_pct: Optional[float] = None


class RunSummary(BaseModel):
    scenario: str
    mode: ControllerMode
    interval_ms: int
    duration_s: float
    seed: int
    jobs: List[JobSummary] = Field(default_factory=list)
    aggregate: JobSummary = Field(default_factory=lambda: JobSummary(job_id="ALL"))

    def by_job(self) -> Dict[str, JobSummary]:
        return {job.job_id: job for job in self.jobs}


class ComparisonRow(BaseModel):
    job_id: str
    throughput_a: float
    throughput_b: float
    delta_rpc_s: float
    relative_delta: Optional[float] = Field(None, description="delta / throughput_b; None when b is zero and a is not")


class Comparison(BaseModel):
    label_a: str
    label_b: str
    rows: List[ComparisonRow] = Field(default_factory=list)
    aggregate: ComparisonRow

    def by_job(self) -> Dict[str, ComparisonRow]:
        return {row.job_id: row for row in self.rows}
