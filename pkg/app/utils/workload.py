"""
Synthetic job workloads.

Jobs issue RPCs through one or more processes: continuous streams at a fixed
rate (optionally delayed and jittered) or periodic bursts of back-to-back
RPCs. Generation is deterministic for a given seed. The builtin scenarios
reproduce the evaluation workloads at desk scale: a 1000 tok/s target served
by 4 threads at 4 ms per RPC.
"""
import logging
import random
from fractions import Fraction
from typing import Dict, List, Mapping, Tuple, Union

from pydantic import ValidationError

from app.errors import ContractViolationError, ScenarioValidationError
from app.models.schemas import (
    ContinuousPattern,
    ControllerConfig,
    JobSpec,
    OstConfig,
    PeriodicBurstPattern,
    Scenario,
)
from app.services.tbf_scheduler import Rpc

logger = logging.getLogger(__name__)

FREQUENCY_SWEEP_MS = [100, 200, 400, 800, 1600]


def to_ms(seconds: float) -> Fraction:
    """Exact milliseconds from a decimal number of seconds."""
    return Fraction(str(seconds)) * 1000


def _continuous_times(
    pattern: ContinuousPattern, start_ms: Fraction, horizon_ms: Fraction, rng: random.Random
) -> List[Fraction]:
    spacing = 1000 / Fraction(str(pattern.rate_rpc_s))
    first = start_ms + to_ms(pattern.start_delay_s)
    jitter = Fraction(str(pattern.jitter))
    times = []
    k = 0
    while True:
        nominal = first + k * spacing
        if nominal >= horizon_ms:
            break
        t = nominal
        if jitter:
            offset = Fraction(rng.uniform(-1.0, 1.0)).limit_denominator(1000) * jitter
            t = max(first, nominal + offset * spacing)
        if t < horizon_ms:
            times.append(t)
        k += 1
    return times


def _burst_times(pattern: PeriodicBurstPattern, start_ms: Fraction, horizon_ms: Fraction) -> List[Fraction]:
    period = to_ms(pattern.interval_s)
    t = start_ms + to_ms(pattern.phase_s)
    times = []
    while t < horizon_ms:
        times.extend([t] * pattern.burst_rpcs)
        t += period
    return times


def _validated(spec: Union[JobSpec, Mapping]) -> JobSpec:
    if isinstance(spec, JobSpec):
        return spec
    try:
        return JobSpec.model_validate(spec)
    except ValidationError as e:
        error = e.errors()[0]
        key_path = ".".join(str(part) for part in error["loc"])
        raise ScenarioValidationError(error["msg"], key_path=key_path or None) from e


def generate_arrivals(spec: Union[JobSpec, Mapping], horizon_s: float, seed: int) -> List[Rpc]:
    """
    Expand a job's processes into a time-ordered list of RPC arrivals.

    Args:
        spec: Job description (a JobSpec or a plain mapping to validate)
        horizon_s: Arrivals at or after this time are not generated
        seed: Seed for jitter

    Returns:
        RPCs sorted by arrival time, with ``seq`` numbering them in that order
    """
    job = _validated(spec)
    if horizon_s <= job.start_s:
        raise ContractViolationError(f"horizon {horizon_s}s does not extend past job {job.job_id} start {job.start_s}s")

    start_ms = to_ms(job.start_s)
    horizon_ms = to_ms(horizon_s)
    tagged: List[Tuple[Fraction, int, int]] = []
    for index, process in enumerate(job.processes):
        if isinstance(process, ContinuousPattern):
            rng = random.Random(f"{seed}:{job.job_id}:{index}")
            times = _continuous_times(process, start_ms, horizon_ms, rng)
        else:
            times = _burst_times(process, start_ms, horizon_ms)
        tagged.extend((t, index, k) for k, t in enumerate(times))
    tagged.sort()

    if job.total_volume_tokens is not None:
        tagged = tagged[: job.total_volume_tokens]
    return [Rpc(job_id=job.job_id, arrival_time=t, seq=seq, nodes=job.nodes) for seq, (t, _, _) in enumerate(tagged)]


def _desk_ost() -> OstConfig:
    return OstConfig(max_token_rate=1000, thread_count=4, per_rpc_service_time_ms=4.0, bucket_depth=3)


def _sc1() -> Scenario:
    # Identical streams, each above the largest share; priority comes from node count alone
    jobs = [
        JobSpec(job_id=job_id, nodes=nodes, processes=[ContinuousPattern(rate_rpc_s=600)])
        for job_id, nodes in (("job1", 10), ("job2", 10), ("job3", 30), ("job4", 50))
    ]
    return Scenario(
        name="sc1",
        description="Token allocation by priority: four saturating jobs at 10/10/30/50% of nodes",
        ost=_desk_ost(),
        jobs=jobs,
        duration_s=60,
    )


def _sc2() -> Scenario:
    # Burst phases sit between controller ticks. Bursts stay below a bursty job's
    # 75-token share so one interval of its rule drains them through the fallback queue.
    jobs = [
        JobSpec(job_id="job1", nodes=30, processes=[PeriodicBurstPattern(burst_rpcs=45, interval_s=2.0, phase_s=0.35)]),
        JobSpec(job_id="job2", nodes=30, processes=[PeriodicBurstPattern(burst_rpcs=35, interval_s=2.5, phase_s=0.95)]),
        JobSpec(job_id="job3", nodes=30, processes=[PeriodicBurstPattern(burst_rpcs=50, interval_s=3.0, phase_s=1.55)]),
        # Starts on the first tick; nothing of it is left behind in the fallback queue
        JobSpec(job_id="job4", nodes=10, start_s=0.1, processes=[ContinuousPattern(rate_rpc_s=1200)]),
    ]
    return Scenario(
        name="sc2",
        description="Redistribution: three bursty 30% jobs and one continuous 10% job",
        ost=_desk_ost(),
        jobs=jobs,
        duration_s=30,
    )


def _sc3_jobs() -> List[JobSpec]:
    # Times are pre-scaling; the scenario's time_scale shrinks them to desk length
    return [
        JobSpec(
            job_id="job1",
            nodes=25,
            processes=[
                PeriodicBurstPattern(burst_rpcs=30, interval_s=6.0, phase_s=1.0),
                ContinuousPattern(rate_rpc_s=400, start_delay_s=20),
            ],
        ),
        JobSpec(
            job_id="job2",
            nodes=25,
            processes=[
                PeriodicBurstPattern(burst_rpcs=40, interval_s=8.0, phase_s=2.2),
                ContinuousPattern(rate_rpc_s=400, start_delay_s=50),
            ],
        ),
        JobSpec(
            job_id="job3",
            nodes=25,
            processes=[
                PeriodicBurstPattern(burst_rpcs=10, interval_s=10.0, phase_s=3.4),
                ContinuousPattern(rate_rpc_s=800, start_delay_s=80),
            ],
        ),
        JobSpec(job_id="job4", nodes=25, processes=[ContinuousPattern(rate_rpc_s=700)]),
    ]


def _sc3() -> Scenario:
    return Scenario(
        name="sc3",
        description="Re-compensation: equal-priority jobs turning continuous after 20/50/80 s (scaled by 0.25)",
        ost=_desk_ost(),
        jobs=_sc3_jobs(),
        duration_s=120,
        time_scale=0.25,
    )


def _sc4_freq() -> Scenario:
    return Scenario(
        name="sc4-freq",
        description="Allocation frequency sweep over the sc3 workload",
        ost=_desk_ost(),
        controller=ControllerConfig(sweep_interval_ms=list(FREQUENCY_SWEEP_MS)),
        jobs=_sc3_jobs(),
        duration_s=120,
        time_scale=0.25,
    )


_BUILTINS = {
    "sc1": _sc1,
    "sc2": _sc2,
    "sc3": _sc3,
    "sc4-freq": _sc4_freq,
}


def builtin_scenarios() -> Dict[str, Scenario]:
    """Ready-to-run desk-scale scenarios by name."""
    return {name: build() for name, build in _BUILTINS.items()}
