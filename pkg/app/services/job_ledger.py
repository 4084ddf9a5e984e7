"""
Job Ledger Service
Keeps lend/borrow records, carried remainders and last grants per job, and
counts per-interval demand for the controller.
"""

import logging
from typing import Callable, Dict, List, Optional

from app.config import DEFAULT_EVICTION_K, REMAINDER_RESOLUTION
from app.errors import ContractViolationError, LedgerConsistencyError, ProtocolError
from app.models.allocation import AllocationPlan, JobInput
from app.models.ledger import EvictionEvent, IntervalStats, JobLedgerEntry
from app.utils.remainders import quantize_remainder

logger = logging.getLogger(__name__)

COLLECTING = "collecting"
SNAPSHOTTED = "snapshotted"
COMMITTED = "committed"


class JobLedger:
    """Ledger and stats tracker for a single storage target.

    The per-interval protocol is strictly ``snapshot_active`` -> ``commit`` ->
    ``clear_stats``. An empty snapshot may be cleared without a commit.
    Callers must serialize access per storage target.
    """

    def __init__(
        self,
        eviction_k: int = DEFAULT_EVICTION_K,
        remainder_resolution: int = REMAINDER_RESOLUTION,
        stats_sink: Optional[Callable[[IntervalStats], None]] = None,
    ):
        if eviction_k < 1:
            raise ContractViolationError(f"eviction_k must be >= 1, got {eviction_k}")
        self.eviction_k = eviction_k
        self.remainder_resolution = remainder_resolution
        self.stats_sink = stats_sink
        self.entries: Dict[str, JobLedgerEntry] = {}
        self.stats = IntervalStats(interval_index=0)
        self.evictions: List[EvictionEvent] = []
        self._phase = COLLECTING
        self._snapshot_ids: List[str] = []
        self._cleared_index: Optional[int] = None

    @property
    def interval_index(self) -> int:
        return self.stats.interval_index

    @property
    def phase(self) -> str:
        return self._phase

    def observe_rpc(self, job_id: str, nodes: int, now: float) -> None:
        """Count one RPC arrival for the current interval."""
        if self._phase != COLLECTING:
            raise ProtocolError(
                f"RPC for {job_id} at {now} ms observed while interval {self.interval_index} is being closed"
            )
        entry = self.entries.get(job_id)
        if entry is None:
            entry = JobLedgerEntry(job_id=job_id, nodes=nodes, created_at=self.interval_index)
            self.entries[job_id] = entry
            logger.debug(f"Ledger entry created for job {job_id} ({nodes} nodes)")
        elif entry.nodes != nodes:
            entry.nodes = nodes
        self.stats.demand[job_id] = self.stats.demand.get(job_id, 0) + 1

    def observe_served(self, job_id: str) -> None:
        """Count one dispatched RPC. Diagnostics only; never feeds allocation."""
        self.stats.served[job_id] = self.stats.served.get(job_id, 0) + 1

    def snapshot_active(self, interval_index: int) -> List[JobInput]:
        """
        Close the interval and return the jobs that issued RPCs during it.

        Idle jobs have their idle counter bumped; those idle for ``eviction_k``
        consecutive intervals are dropped and reported.

        Args:
            interval_index: Index of the interval being closed

        Returns:
            JobInput for every active job, ordered by job id
        """
        if self._phase != COLLECTING:
            raise ProtocolError(f"snapshot of interval {interval_index} while ledger is {self._phase}")
        if interval_index != self.interval_index:
            raise ProtocolError(f"snapshot of interval {interval_index}, ledger is at {self.interval_index}")

        active: List[JobInput] = []
        for job_id in sorted(self.entries):
            entry = self.entries[job_id]
            demand = self.stats.demand.get(job_id, 0)
            if demand > 0:
                # Only a grant from the interval just before counts as the previous allocation
                fresh = entry.granted_at == interval_index - 1
                active.append(
                    JobInput(
                        job_id=job_id,
                        nodes=entry.nodes,
                        demand=demand,
                        prev_alloc=entry.last_alloc if fresh else None,
                        record=entry.record,
                        remainder=entry.remainder,
                    )
                )
                continue
            entry.idle_intervals += 1
            if entry.idle_intervals >= self.eviction_k:
                self._evict(entry, interval_index)

        self._snapshot_ids = [job.job_id for job in active]
        self._phase = SNAPSHOTTED
        return active

    def _evict(self, entry: JobLedgerEntry, interval_index: int) -> None:
        event = EvictionEvent(
            job_id=entry.job_id,
            interval_index=interval_index,
            record=entry.record,
            idle_intervals=entry.idle_intervals,
        )
        self.evictions.append(event)
        del self.entries[entry.job_id]
        if entry.record:
            logger.warning(
                f"Evicted job {entry.job_id} after {entry.idle_intervals} idle intervals "
                f"with outstanding record {entry.record}"
            )
        else:
            logger.info(f"Evicted idle job {entry.job_id} after {entry.idle_intervals} intervals")

    def commit(self, plan: AllocationPlan) -> None:
        """Apply a plan's records, remainders and grants to the ledger."""
        if self._phase != SNAPSHOTTED:
            raise ProtocolError(f"commit while ledger is {self._phase}")
        unknown = sorted(job_id for job_id in plan.grants if job_id not in self.entries)
        if unknown:
            raise LedgerConsistencyError(f"plan references unknown jobs: {', '.join(unknown)}")
        outside = sorted(set(plan.grants) - set(self._snapshot_ids))
        if outside:
            raise LedgerConsistencyError(f"plan references jobs outside the snapshot: {', '.join(outside)}")

        for job_id, grant in plan.grants.items():
            entry = self.entries[job_id]
            update = plan.ledger_updates[job_id]
            entry.record = update.record
            entry.remainder = quantize_remainder(update.remainder, self.remainder_resolution)
            entry.last_alloc = grant
            entry.granted_at = self.interval_index
            entry.idle_intervals = 0
        self._phase = COMMITTED

    def clear_stats(self, interval_index: int) -> None:
        """Zero the demand counters and open the next interval."""
        if self._phase == COLLECTING:
            if self._cleared_index == interval_index:
                return
            raise ProtocolError(f"clear of interval {interval_index} before its snapshot")
        if self._phase == SNAPSHOTTED and self._snapshot_ids:
            raise ProtocolError(f"clear of interval {interval_index} before commit")
        if interval_index != self.interval_index:
            raise ProtocolError(f"clear of interval {interval_index}, ledger is at {self.interval_index}")

        if self.stats_sink is not None:
            self.stats_sink(self.stats)
        self.stats = IntervalStats(interval_index=interval_index + 1)
        self._cleared_index = interval_index
        self._snapshot_ids = []
        self._phase = COLLECTING

    def total_record(self) -> int:
        return sum(entry.record for entry in self.entries.values())

    def evicted_record(self) -> int:
        return sum(event.record for event in self.evictions)

    def record_of(self, job_id: str) -> int:
        entry = self.entries.get(job_id)
        return entry.record if entry else 0

    def grant_of(self, job_id: str) -> Optional[int]:
        entry = self.entries.get(job_id)
        return entry.last_alloc if entry else None
