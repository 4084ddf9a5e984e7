"""
Token Bucket Filter RPC scheduler for one storage target.

RPCs are classified by job id. A job with a rule gets its own FIFO with a
token bucket; everything else lands in the fallback queue, which has no rate
limit and is served whenever an I/O thread would otherwise sit idle. Rule
queues are kept in a heap ordered by the time their bucket next holds a full
token.
"""

import heapq
import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Deque, Dict, List, Mapping, Optional, Tuple

from app.config import DEFAULT_BUCKET_DEPTH
from app.errors import ContractViolationError
from app.models.allocation import AllocationPlan

logger = logging.getLogger(__name__)

FALLBACK = "__fallback__"
# Rule rates must be positive; a zero grant keeps its rule at this floor
MIN_RULE_RATE = Fraction(1)


@dataclass
class Rpc:
    """One I/O request; always worth exactly one token."""
    job_id: str
    arrival_time: Fraction
    seq: int
    nodes: int = 1
    size_tokens: int = 1


@dataclass
class DispatchEvent:
    time: Fraction
    job_id: str
    seq: int
    queue: str  # "rule" or "fallback"
    arrival_time: Fraction


class TokenBucket:
    """Lazily refilled token bucket; the rate is in tokens per second."""

    def __init__(self, rate: Fraction, depth: int, now: Fraction, balance: Optional[Fraction] = None):
        if rate <= 0:
            raise ContractViolationError(f"bucket rate must be positive, got {rate}")
        if depth < 1:
            raise ContractViolationError(f"bucket depth must be >= 1, got {depth}")
        self.rate = Fraction(rate)
        self.depth = depth
        self.balance = Fraction(depth) if balance is None else min(Fraction(balance), Fraction(depth))
        self.last_refill = Fraction(now)

    def refill(self, now: Fraction) -> None:
        elapsed = now - self.last_refill
        if elapsed > 0:
            self.balance = min(Fraction(self.depth), self.balance + self.rate * elapsed / 1000)
            self.last_refill = now

    def deadline(self) -> Fraction:
        """Time (ms) at which the balance reaches one token."""
        if self.balance >= 1:
            return self.last_refill
        return self.last_refill + (1 - self.balance) * 1000 / self.rate

    def consume(self, now: Fraction) -> None:
        self.refill(now)
        if self.balance < 1:
            raise ContractViolationError(f"bucket holds {self.balance} tokens, cannot dispatch")
        self.balance -= 1

    def set_rate(self, rate: Fraction, now: Fraction) -> None:
        """Change the rate, keeping the accrued balance."""
        if rate <= 0:
            raise ContractViolationError(f"bucket rate must be positive, got {rate}")
        self.refill(now)
        self.rate = Fraction(rate)
        self.balance = min(self.balance, Fraction(self.depth))


@dataclass
class TbfQueue:
    job_id: str
    bucket: TokenBucket
    rule_priority: Fraction
    fifo: Deque[Rpc] = field(default_factory=deque)
    version: int = 0

    def deadline(self) -> Optional[Fraction]:
        if not self.fifo:
            return None
        return self.bucket.deadline()


@dataclass
class Rule:
    rate: Fraction
    priority: Fraction


class RuleTable:
    """Active TBF rules by job id."""

    def __init__(self):
        self.rules: Dict[str, Rule] = {}
        self.generation = 0

    def __contains__(self, job_id: str) -> bool:
        return job_id in self.rules

    def get(self, job_id: str) -> Optional[Rule]:
        return self.rules.get(job_id)


class ServerPool:
    """Fixed pool of I/O threads with a constant per-RPC service time."""

    def __init__(self, thread_count: int, service_time_ms: Fraction):
        if thread_count < 1:
            raise ContractViolationError(f"thread_count must be >= 1, got {thread_count}")
        if service_time_ms <= 0:
            raise ContractViolationError(f"service time must be positive, got {service_time_ms}")
        self.thread_count = thread_count
        self.service_time_ms = Fraction(service_time_ms)
        self.busy_until: List[Fraction] = [Fraction(0)] * thread_count

    @property
    def capacity_rpc_s(self) -> Fraction:
        return self.thread_count * 1000 / self.service_time_ms

    def idle_thread(self, now: Fraction) -> Optional[int]:
        for index, until in enumerate(self.busy_until):
            if until <= now:
                return index
        return None

    def occupy(self, index: int, now: Fraction) -> Fraction:
        done = now + self.service_time_ms
        self.busy_until[index] = done
        return done


class TbfScheduler:
    """Simulated TBF scheduler of a single storage target."""

    def __init__(
        self,
        thread_count: int,
        service_time_ms: Fraction,
        bucket_depth: int = DEFAULT_BUCKET_DEPTH,
        ledger=None,
        trace_sink: Optional[Callable[[DispatchEvent], None]] = None,
    ):
        self.pool = ServerPool(thread_count, service_time_ms)
        self.bucket_depth = bucket_depth
        self.rules = RuleTable()
        self.queues: Dict[str, TbfQueue] = {}
        self.fallback: Deque[Rpc] = deque()
        self.fallback_counts: Dict[str, int] = {}
        self.ledger = ledger
        self.trace_sink = trace_sink
        self._heap: List[Tuple[Fraction, Fraction, str, int]] = []
        self._stamp = 0
        self.enqueued = 0
        self.dispatched = 0

    # Queueing

    def enqueue(self, rpc: Rpc, now: Fraction) -> None:
        """Classify an arriving RPC into its rule queue or the fallback queue."""
        if rpc.arrival_time != now:
            raise ContractViolationError(f"RPC {rpc.job_id}#{rpc.seq} arrives at {rpc.arrival_time}, now is {now}")
        queue = self.queues.get(rpc.job_id)
        if queue is not None:
            queue.fifo.append(rpc)
            if len(queue.fifo) == 1:
                self._push(queue)
        else:
            self.fallback.append(rpc)
            self.fallback_counts[rpc.job_id] = self.fallback_counts.get(rpc.job_id, 0) + 1
        self.enqueued += 1
        if self.ledger is not None:
            self.ledger.observe_rpc(rpc.job_id, rpc.nodes, now)

    def _push(self, queue: TbfQueue) -> None:
        # Stamps are global so entries of a stopped-then-recreated rule stay stale
        self._stamp += 1
        queue.version = self._stamp
        deadline = queue.deadline()
        if deadline is not None:
            heapq.heappush(self._heap, (deadline, -queue.rule_priority, queue.job_id, queue.version))

    def _peek_rule_queue(self) -> Optional[Tuple[Fraction, TbfQueue]]:
        while self._heap:
            deadline, _, job_id, version = self._heap[0]
            queue = self.queues.get(job_id)
            if queue is None or queue.version != version or not queue.fifo:
                heapq.heappop(self._heap)
                continue
            return deadline, queue
        return None

    # Dispatch

    def dispatch(self, now: Fraction) -> List[Tuple[Rpc, Fraction]]:
        """
        Hand RPCs to idle threads.

        Rule queues holding a full token go first, earliest deadline first.
        The fallback queue is served only when no rule queue is eligible.
        Rule-bound RPCs never run without a token.

        Args:
            now: Current virtual time in ms

        Returns:
            List of (rpc, start_time) started at ``now``
        """
        started: List[Tuple[Rpc, Fraction]] = []
        while True:
            thread = self.pool.idle_thread(now)
            if thread is None:
                break
            rpc, source = self._next_rpc(now)
            if rpc is None:
                break
            self.pool.occupy(thread, now)
            self.dispatched += 1
            started.append((rpc, now))
            if self.ledger is not None:
                self.ledger.observe_served(rpc.job_id)
            if self.trace_sink is not None:
                self.trace_sink(DispatchEvent(now, rpc.job_id, rpc.seq, source, rpc.arrival_time))
        return started

    def _next_rpc(self, now: Fraction) -> Tuple[Optional[Rpc], str]:
        head = self._peek_rule_queue()
        if head is not None and head[0] <= now:
            _, queue = head
            heapq.heappop(self._heap)
            queue.bucket.consume(now)
            rpc = queue.fifo.popleft()
            self._push(queue)
            return rpc, "rule"
        if self.fallback:
            rpc = self.fallback.popleft()
            remaining = self.fallback_counts[rpc.job_id] - 1
            if remaining:
                self.fallback_counts[rpc.job_id] = remaining
            else:
                del self.fallback_counts[rpc.job_id]
            return rpc, FALLBACK
        return None, ""

    def next_wakeup(self, now: Fraction) -> Optional[Fraction]:
        """Earliest future deadline of a pending rule queue, if a thread is idle."""
        if self.pool.idle_thread(now) is None:
            return None
        head = self._peek_rule_queue()
        if head is None or head[0] <= now:
            return None
        return head[0]

    # Rules

    def set_rules(self, rates: Mapping[str, Fraction], priorities: Mapping[str, Fraction], now: Fraction) -> None:
        """
        Install the rule set: create, modify or stop rules so that exactly the
        jobs in ``rates`` have one. RPCs of stopped rules move to the fallback queue.

        Args:
            rates: Token rate per job in tokens/second
            priorities: Rule priority per job
            now: Current virtual time in ms
        """
        stopped = sorted(job_id for job_id in self.queues if job_id not in rates)
        for job_id in stopped:
            self._stop_rule(job_id)

        for job_id in sorted(rates):
            rate = max(Fraction(rates[job_id]), MIN_RULE_RATE)
            priority = Fraction(priorities.get(job_id, 0))
            queue = self.queues.get(job_id)
            if queue is None:
                queue = TbfQueue(job_id=job_id, bucket=TokenBucket(rate, self.bucket_depth, now), rule_priority=priority)
                self.queues[job_id] = queue
            else:
                queue.bucket.set_rate(rate, now)
                queue.rule_priority = priority
            self.rules.rules[job_id] = Rule(rate=rate, priority=priority)
            self._push(queue)

        self.rules.generation += 1
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                f"Rule generation {self.rules.generation}: {len(rates)} rules, stopped {stopped or 'none'}"
            )

    def apply_rules(self, plan: AllocationPlan, interval_ms: int, now: Fraction) -> None:
        """Turn a plan's per-interval grants into rule rates (tokens/second)."""
        rates = {job_id: Fraction(grant * 1000, interval_ms) for job_id, grant in plan.grants.items()}
        self.set_rules(rates, plan.phases.priorities, now)

    def _stop_rule(self, job_id: str) -> None:
        queue = self.queues.pop(job_id)
        self.rules.rules.pop(job_id, None)
        if queue.fifo:
            moved = len(queue.fifo)
            self.fallback = deque(
                heapq.merge(self.fallback, queue.fifo, key=lambda rpc: (rpc.arrival_time, rpc.job_id, rpc.seq))
            )
            self.fallback_counts[job_id] = self.fallback_counts.get(job_id, 0) + moved
            logger.debug(f"Rule for {job_id} stopped, {moved} RPCs moved to fallback")

    # Introspection

    def queue_depth(self, job_id: str) -> int:
        """Pending RPCs of a job across its rule queue and the fallback queue."""
        queue = self.queues.get(job_id)
        pending = len(queue.fifo) if queue is not None else 0
        return pending + self.fallback_counts.get(job_id, 0)

    def queued(self) -> int:
        return sum(len(queue.fifo) for queue in self.queues.values()) + len(self.fallback)

    def rate_of(self, job_id: str) -> Optional[Fraction]:
        rule = self.rules.get(job_id)
        return rule.rate if rule else None
