"""
Benchmark Service
Times allocation steps on synthetic active sets.
"""

import hashlib
import logging
import os
import platform
import random
import time
from fractions import Fraction
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import psutil
from pydantic import BaseModel

from app.config import DEFAULT_BENCH_TRIALS, DEFAULT_INTERVAL_MS, DEFAULT_SEED
from app.errors import ContractViolationError
from app.models.allocation import JobInput, OstBudget
from app.utils.allocation import allocate_step

logger = logging.getLogger(__name__)

# Average tokens per job per interval in synthetic sets
TOKENS_PER_JOB = 100
SCALING_BASE_JOBS = 100
SCALING_LIMIT = 3.0


class BenchResult(BaseModel):
    n_jobs: int
    trials: int
    mean_us: float
    p95_us: float
    max_us: float
    per_job_us: float
    input_digest: str


class ScalingCheck(BaseModel):
    base: BenchResult
    target: BenchResult
    ratio: float
    within_limit: bool


def synthetic_active_set(n_jobs: int, rng: random.Random) -> Tuple[OstBudget, List[JobInput]]:
    """Random active set: mixed node counts, demands, previous grants and records."""
    budget = OstBudget(max_token_rate=TOKENS_PER_JOB * n_jobs * 1000 // DEFAULT_INTERVAL_MS, interval_ms=DEFAULT_INTERVAL_MS)
    jobs = []
    for index in range(n_jobs):
        prev_alloc = None if rng.random() < 0.1 else rng.randint(0, 2 * TOKENS_PER_JOB)
        jobs.append(
            JobInput(
                job_id=f"job{index:05d}",
                nodes=rng.randint(1, 64),
                demand=rng.randint(1, 2 * TOKENS_PER_JOB),
                prev_alloc=prev_alloc,
                record=rng.randint(-50, 50),
                remainder=Fraction(rng.randrange(1000), 1000),
            )
        )
    return budget, jobs


def _digest(inputs: Sequence[Tuple[OstBudget, List[JobInput]]]) -> str:
    sha = hashlib.sha256()
    for budget, jobs in inputs:
        sha.update(f"{budget.max_token_rate}/{budget.interval_ms}".encode())
        for job in jobs:
            sha.update(f"{job.job_id},{job.nodes},{job.demand},{job.prev_alloc},{job.record},{job.remainder};".encode())
    return sha.hexdigest()


def bench_alloc(n_jobs: int, trials: int = DEFAULT_BENCH_TRIALS, seed: int = DEFAULT_SEED) -> BenchResult:
    """
    Time ``allocate_step`` over ``trials`` random active sets of ``n_jobs`` jobs.

    The input sets depend only on the seed; the timings do not.

    Args:
        n_jobs: Active jobs per step
        trials: Number of timed steps
        seed: Seed for the synthetic inputs

    Returns:
        BenchResult with mean / p95 / max step time and mean time per job
    """
    if n_jobs < 1:
        raise ContractViolationError(f"n_jobs must be >= 1, got {n_jobs}")
    if trials < 1:
        raise ContractViolationError(f"trials must be >= 1, got {trials}")

    rng = random.Random(seed)
    inputs = [synthetic_active_set(n_jobs, rng) for _ in range(trials)]
    samples = np.empty(trials, dtype=np.float64)
    for index, (budget, jobs) in enumerate(inputs):
        started = time.perf_counter_ns()
        allocate_step(budget, jobs, index)
        samples[index] = (time.perf_counter_ns() - started) / 1000.0

    mean_us = float(np.mean(samples))
    result = BenchResult(
        n_jobs=n_jobs,
        trials=trials,
        mean_us=mean_us,
        p95_us=float(np.percentile(samples, 95)),
        max_us=float(np.max(samples)),
        per_job_us=mean_us / n_jobs,
        input_digest=_digest(inputs),
    )
    logger.info(f"bench n={n_jobs}: mean {result.mean_us:.1f} us, p95 {result.p95_us:.1f} us")
    return result


def scaling_check(n_jobs: int, trials: int = DEFAULT_BENCH_TRIALS, seed: int = DEFAULT_SEED) -> ScalingCheck:
    """Compare per-job step time at ``n_jobs`` against the 100-job baseline."""
    base = bench_alloc(SCALING_BASE_JOBS, trials, seed)
    target = bench_alloc(n_jobs, trials, seed)
    ratio = target.per_job_us / base.per_job_us if base.per_job_us else 0.0
    return ScalingCheck(base=base, target=target, ratio=ratio, within_limit=ratio <= SCALING_LIMIT)


def host_info() -> Dict[str, Any]:
    """Host details printed next to benchmark numbers."""
    memory = psutil.virtual_memory()
    return {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "logical_cpus": psutil.cpu_count(logical=True) or os.cpu_count(),
        "memory_total": f"{memory.total / (1024 * 1024 * 1024):.2f} GB",
        "memory_available": f"{memory.available / (1024 * 1024 * 1024):.2f} GB",
    }
