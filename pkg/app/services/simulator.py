"""
Simulation Service
Discrete-event simulation of one storage target under AdapTBF, static rules
or no bandwidth control, plus run comparison and multi-target fan-out.
"""

import heapq
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Optional, Tuple

from app.errors import ComparisonError, EmptyActiveSetError
from app.models.allocation import AllocationPlan, JobInput, OstBudget
from app.models.ledger import EvictionEvent
from app.models.schemas import (
    Comparison,
    ComparisonRow,
    ControllerMode,
    JobSummary,
    MetricsFrame,
    RunSummary,
    Scenario,
)
from app.services.job_ledger import JobLedger
from app.services.tbf_scheduler import DispatchEvent, Rpc, TbfScheduler
from app.utils.allocation import allocate_step, compute_priorities
from app.utils.workload import generate_arrivals, to_ms

logger = logging.getLogger(__name__)

# Event kinds, in the order they run at equal timestamps
COMPLETION = 1
TICK = 2
WAKEUP = 3
FRAME = 4


@dataclass
class RunResult:
    """Everything a single simulated run produced."""
    scenario: Scenario
    frames: List[MetricsFrame]
    summary: RunSummary
    plans: List[AllocationPlan] = field(default_factory=list)
    evictions: List[EvictionEvent] = field(default_factory=list)
    trace: List[DispatchEvent] = field(default_factory=list)
    arrivals: Dict[str, int] = field(default_factory=dict)
    served: Dict[str, int] = field(default_factory=dict)
    queued: Dict[str, int] = field(default_factory=dict)
    static_grants: Dict[str, Fraction] = field(default_factory=dict)


class Simulator:
    """Runs one scenario on one storage target in virtual time."""

    def __init__(self, scenario: Scenario, trace: bool = False):
        self.scenario = scenario.scaled()
        self.trace_enabled = trace or scenario.output.trace
        self.mode = self.scenario.controller.mode
        self.interval_ms = self.scenario.controller.interval_ms
        self.duration_ms = to_ms(self.scenario.duration_s)
        self.job_ids = sorted(job.job_id for job in self.scenario.jobs)

        ost = self.scenario.ost
        self.budget = OstBudget(max_token_rate=ost.max_token_rate, interval_ms=self.interval_ms)
        self.ledger: Optional[JobLedger] = None
        if self.mode == ControllerMode.ADAPTBF:
            self.ledger = JobLedger(eviction_k=self.scenario.controller.eviction_k)

        self.trace: List[DispatchEvent] = []
        self.scheduler = TbfScheduler(
            thread_count=ost.thread_count,
            service_time_ms=ost.service_time,
            bucket_depth=ost.bucket_depth,
            ledger=self.ledger,
            trace_sink=self.trace.append if self.trace_enabled else None,
        )

        self.plans: List[AllocationPlan] = []
        self.frames: List[MetricsFrame] = []
        self.static_grants: Dict[str, Fraction] = {}
        self.arrivals = {job_id: 0 for job_id in self.job_ids}
        self.served = {job_id: 0 for job_id in self.job_ids}
        self._frame_served = dict.fromkeys(self.job_ids, 0)
        self._frame_demand = dict.fromkeys(self.job_ids, 0)
        self._events: List[Tuple[Fraction, int, int, object]] = []
        self._seq = 0

    def _schedule(self, time: Fraction, kind: int, payload: object = None) -> None:
        self._seq += 1
        heapq.heappush(self._events, (time, kind, self._seq, payload))

    def _arrival_stream(self) -> Iterator[Rpc]:
        horizon_s = self.scenario.duration_s
        streams = [
            generate_arrivals(job, horizon_s, self.scenario.seed)
            for job in sorted(self.scenario.jobs, key=lambda job: job.job_id)
        ]
        return heapq.merge(*streams, key=lambda rpc: (rpc.arrival_time, rpc.job_id, rpc.seq))

    # Controllers

    def _install_static_rules(self, now: Fraction) -> None:
        if not self.scenario.jobs:
            return
        # Priorities over the full job set, fixed for the whole run
        priorities = compute_priorities(
            [JobInput(job_id=job.job_id, nodes=job.nodes, demand=0) for job in self.scenario.jobs]
        )
        rates = {job_id: self.scenario.ost.max_token_rate * p for job_id, p in priorities.items()}
        self.scheduler.set_rules(rates, priorities, now)
        self.static_grants = {job_id: rate * self.interval_ms / 1000 for job_id, rate in rates.items()}

    def _tick(self, now: Fraction) -> None:
        """One control period: snapshot, allocate, apply rules, commit, clear."""
        ledger = self.ledger
        index = ledger.interval_index
        active = ledger.snapshot_active(index)
        if active:
            plan = allocate_step(self.budget, active, index, self.scenario.controller.reclaim_bound_mode)
            self.scheduler.apply_rules(plan, self.interval_ms, now)
            ledger.commit(plan)
            self.plans.append(plan)
        elif logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"Interval {index}: {EmptyActiveSetError.code}, rules left untouched")
        ledger.clear_stats(index)

    # Metrics

    def _granted(self, job_id: str) -> Optional[Fraction]:
        if self.mode == ControllerMode.STATIC:
            return self.static_grants.get(job_id)
        if self.mode == ControllerMode.ADAPTBF and job_id in self.scheduler.rules:
            grant = self.ledger.grant_of(job_id)
            return None if grant is None else Fraction(grant)
        return None

    def _emit_frame(self, now: Fraction) -> None:
        frame = MetricsFrame(
            time_ms=int(now),
            served=dict(self._frame_served),
            granted={job_id: self._granted(job_id) for job_id in self.job_ids},
            record={
                job_id: self.ledger.record_of(job_id) if self.ledger is not None else 0 for job_id in self.job_ids
            },
            demand=dict(self._frame_demand),
            queue_depth={job_id: self.scheduler.queue_depth(job_id) for job_id in self.job_ids},
            fallback_depth=len(self.scheduler.fallback),
            aggregate_served=sum(self._frame_served.values()),
        )
        self.frames.append(frame)
        self._frame_served = dict.fromkeys(self.job_ids, 0)
        self._frame_demand = dict.fromkeys(self.job_ids, 0)

    # Main loop

    def run(self) -> RunResult:
        """
        Advance virtual time to the end of the scenario.

        At equal timestamps events run as arrivals, service completions,
        controller tick, dispatch, metrics frame.

        Returns:
            RunResult with frames, summary and per-step diagnostics
        """
        logger.info(
            f"Running {self.scenario.name} in {self.mode.value} mode: {len(self.job_ids)} jobs, "
            f"{self.scenario.duration_s}s, interval {self.interval_ms} ms"
        )
        if self.mode == ControllerMode.STATIC:
            self._install_static_rules(Fraction(0))
        if self.mode == ControllerMode.ADAPTBF:
            t = Fraction(self.interval_ms)
            while t <= self.duration_ms:
                self._schedule(t, TICK)
                t += self.interval_ms
        t = Fraction(self.scenario.metrics_interval_ms)
        while t <= self.duration_ms:
            self._schedule(t, FRAME)
            t += self.scenario.metrics_interval_ms

        arrivals = self._arrival_stream()
        pending = next(arrivals, None)
        service_time = self.scheduler.pool.service_time_ms

        while True:
            candidates = []
            if pending is not None:
                candidates.append(pending.arrival_time)
            if self._events:
                candidates.append(self._events[0][0])
            if not candidates:
                break
            now = min(candidates)
            if now > self.duration_ms:
                break

            while pending is not None and pending.arrival_time == now:
                self.scheduler.enqueue(pending, now)
                self.arrivals[pending.job_id] += 1
                self._frame_demand[pending.job_id] += 1
                pending = next(arrivals, None)

            frame_due = False
            while self._events and self._events[0][0] == now:
                _, kind, _, _ = heapq.heappop(self._events)
                if kind == TICK:
                    self._tick(now)
                elif kind == FRAME:
                    frame_due = True

            for rpc, _ in self.scheduler.dispatch(now):
                self.served[rpc.job_id] += 1
                self._frame_served[rpc.job_id] += 1
                self._schedule(now + service_time, COMPLETION)
            wakeup = self.scheduler.next_wakeup(now)
            if wakeup is not None:
                self._schedule(wakeup, WAKEUP)

            if frame_due:
                self._emit_frame(now)

        queued = {job_id: self.scheduler.queue_depth(job_id) for job_id in self.job_ids}
        summary = summarize(self.scenario, self.arrivals, self.served, queued)
        logger.info(
            f"Finished {self.scenario.name} ({self.mode.value}): served {summary.aggregate.served} "
            f"of {summary.aggregate.arrivals} RPCs, {len(self.plans)} allocation steps"
        )
        return RunResult(
            scenario=self.scenario,
            frames=self.frames,
            summary=summary,
            plans=self.plans,
            evictions=list(self.ledger.evictions) if self.ledger is not None else [],
            trace=self.trace,
            arrivals=dict(self.arrivals),
            served=dict(self.served),
            queued=queued,
            static_grants=dict(self.static_grants),
        )


def summarize(
    scenario: Scenario, arrivals: Dict[str, int], served: Dict[str, int], queued: Dict[str, int]
) -> RunSummary:
    """Per-job totals and mean throughput over the run."""
    duration = scenario.duration_s
    nodes = scenario.job_nodes()
    jobs = [
        JobSummary(
            job_id=job_id,
            nodes=nodes[job_id],
            arrivals=arrivals[job_id],
            served=served[job_id],
            queued=queued[job_id],
            mean_throughput_rpc_s=served[job_id] / duration,
        )
        for job_id in sorted(arrivals)
    ]
    aggregate = JobSummary(
        job_id="ALL",
        nodes=sum(job.nodes for job in jobs),
        arrivals=sum(job.arrivals for job in jobs),
        served=sum(job.served for job in jobs),
        queued=sum(job.queued for job in jobs),
        mean_throughput_rpc_s=sum(job.served for job in jobs) / duration,
    )
    return RunSummary(
        scenario=scenario.name,
        mode=scenario.controller.mode,
        interval_ms=scenario.controller.interval_ms,
        duration_s=duration,
        seed=scenario.seed,
        jobs=jobs,
        aggregate=aggregate,
    )


def run(scenario: Scenario, trace: bool = False) -> RunResult:
    """Simulate one storage target running ``scenario``."""
    return Simulator(scenario, trace=trace).run()


def run_parallel_osts(scenario: Scenario, count: int, max_workers: Optional[int] = None) -> List[RunResult]:
    """
    Run ``count`` independent storage targets of the same scenario.

    Target ``i`` uses seed ``scenario.seed + i``; targets share nothing.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    variants = [scenario.model_copy(update={"seed": scenario.seed + i}) for i in range(count)]
    with ThreadPoolExecutor(max_workers=max_workers or count) as executor:
        return list(executor.map(run, variants))


def _row(job_id: str, a: float, b: float) -> ComparisonRow:
    delta = a - b
    if b:
        relative: Optional[float] = delta / b
    else:
        relative = 0.0 if delta == 0 else None
    return ComparisonRow(job_id=job_id, throughput_a=a, throughput_b=b, delta_rpc_s=delta, relative_delta=relative)


def compare(run_a: RunSummary, run_b: RunSummary) -> Comparison:
    """
    Per-job throughput gain or loss of ``run_a`` relative to ``run_b``.

    Raises:
        ComparisonError: If the runs cover different jobs or durations
    """
    jobs_a = run_a.by_job()
    jobs_b = run_b.by_job()
    if set(jobs_a) != set(jobs_b):
        missing = sorted(set(jobs_a) ^ set(jobs_b))
        raise ComparisonError(f"runs cover different jobs: {', '.join(missing)}")
    if run_a.duration_s != run_b.duration_s:
        raise ComparisonError(f"runs differ in duration: {run_a.duration_s}s vs {run_b.duration_s}s")

    rows = [
        _row(job_id, jobs_a[job_id].mean_throughput_rpc_s, jobs_b[job_id].mean_throughput_rpc_s)
        for job_id in sorted(jobs_a)
    ]
    aggregate = _row("ALL", run_a.aggregate.mean_throughput_rpc_s, run_b.aggregate.mean_throughput_rpc_s)
    return Comparison(
        label_a=f"{run_a.scenario}/{run_a.mode.value}",
        label_b=f"{run_b.scenario}/{run_b.mode.value}",
        rows=rows,
        aggregate=aggregate,
    )
