from fractions import Fraction

import pytest

from app.errors import ContractViolationError
from app.models.allocation import OstBudget
from app.services.job_ledger import JobLedger
from app.services.tbf_scheduler import FALLBACK, MIN_RULE_RATE, Rpc, TbfScheduler, TokenBucket
from app.utils.allocation import allocate_step

F = Fraction
BUDGET = OstBudget(max_token_rate=1000, interval_ms=100)


def _scheduler(**kwargs):
    options = {"thread_count": 4, "service_time_ms": F(4), "bucket_depth": 3}
    options.update(kwargs)
    return TbfScheduler(**options)


def _drive(scheduler, until_ms, arrivals=()):
    """Run the dispatch loop on virtual time; returns (start, rpc) in dispatch order."""
    pending = sorted(arrivals, key=lambda rpc: (rpc.arrival_time, rpc.job_id, rpc.seq))
    served = []
    now = F(0)
    while now <= until_ms:
        while pending and pending[0].arrival_time == now:
            scheduler.enqueue(pending.pop(0), now)
        served.extend((start, rpc) for rpc, start in scheduler.dispatch(now))
        candidates = [t for t in scheduler.pool.busy_until if t > now]
        wakeup = scheduler.next_wakeup(now)
        if wakeup is not None:
            candidates.append(wakeup)
        if pending:
            candidates.append(pending[0].arrival_time)
        if not candidates:
            break
        now = min(candidates)
    return served


class TestTokenBucket:
    def test_new_bucket_is_full(self):
        assert TokenBucket(F(50), 3, F(0)).balance == 3

    def test_refill_is_capped_at_depth(self):
        bucket = TokenBucket(F(50), 3, F(0), balance=F(0))
        bucket.refill(F(1000))
        assert bucket.balance == 3

    def test_deadline_of_empty_bucket(self):
        bucket = TokenBucket(F(50), 3, F(0), balance=F(0))
        assert bucket.deadline() == 20

    def test_consume_without_token(self):
        bucket = TokenBucket(F(50), 3, F(0), balance=F(1, 2))
        with pytest.raises(ContractViolationError):
            bucket.consume(F(0))

    def test_rate_change_keeps_balance(self):
        bucket = TokenBucket(F(100), 3, F(0), balance=F(0))
        bucket.set_rate(F(10), F(5))
        assert bucket.balance == F(1, 2)
        assert bucket.deadline() == 5 + 50

    def test_rate_must_be_positive(self):
        with pytest.raises(ContractViolationError):
            TokenBucket(F(0), 3, F(0))


def test_saturated_queue_serves_its_rate():
    scheduler = _scheduler()
    scheduler.set_rules({"job1": F(50)}, {"job1": F(1)}, F(0))
    arrivals = [Rpc(job_id="job1", arrival_time=F(0), seq=seq) for seq in range(1000)]

    served = _drive(scheduler, 12000, arrivals)
    starts = [start for start, _ in served]

    for window_s in (1, 5, 10):
        for offset_ms in (0, 1000, 1010):
            end = offset_ms + window_s * 1000
            count = sum(1 for start in starts if offset_ms <= start < end)
            assert abs(count - 50 * window_s) <= 3

    seqs = [rpc.seq for _, rpc in served]
    assert seqs == sorted(seqs)


def test_full_bucket_allows_a_burst_of_depth():
    scheduler = _scheduler()
    scheduler.set_rules({"job1": F(50)}, {"job1": F(1)}, F(0))
    for seq in range(10):
        scheduler.enqueue(Rpc(job_id="job1", arrival_time=F(0), seq=seq), F(0))
    assert len(scheduler.dispatch(F(0))) == 3
    assert scheduler.next_wakeup(F(0)) == 20


def test_fallback_is_fcfs_across_jobs():
    scheduler = _scheduler(thread_count=1)
    arrivals = [
        Rpc(job_id="b", arrival_time=F(0), seq=0),
        Rpc(job_id="a", arrival_time=F(1), seq=0),
        Rpc(job_id="b", arrival_time=F(2), seq=1),
    ]
    served = _drive(scheduler, 100, arrivals)
    assert [(rpc.job_id, rpc.seq) for _, rpc in served] == [("b", 0), ("a", 0), ("b", 1)]


def test_rule_queue_goes_before_fallback():
    scheduler = _scheduler(thread_count=1)
    scheduler.set_rules({"ruled": F(1000)}, {"ruled": F(1, 2)}, F(0))
    scheduler.enqueue(Rpc(job_id="free", arrival_time=F(0), seq=0), F(0))
    scheduler.enqueue(Rpc(job_id="ruled", arrival_time=F(0), seq=0), F(0))
    started = scheduler.dispatch(F(0))
    assert [rpc.job_id for rpc, _ in started] == ["ruled"]


def test_fallback_uses_idle_capacity_while_rules_wait():
    scheduler = _scheduler(thread_count=2)
    scheduler.set_rules({"ruled": F(1)}, {"ruled": F(1)}, F(0))
    for seq in range(5):
        scheduler.enqueue(Rpc(job_id="ruled", arrival_time=F(0), seq=seq), F(0))
    scheduler.enqueue(Rpc(job_id="free", arrival_time=F(0), seq=0), F(0))
    served = _drive(scheduler, 50)
    assert [rpc.job_id for _, rpc in served] == ["ruled", "ruled", "ruled", "free"]


def test_equal_deadlines_prefer_higher_rule_priority():
    scheduler = _scheduler(thread_count=1)
    scheduler.set_rules({"low": F(100), "high": F(100)}, {"low": F(1, 4), "high": F(3, 4)}, F(0))
    scheduler.enqueue(Rpc(job_id="low", arrival_time=F(0), seq=0), F(0))
    scheduler.enqueue(Rpc(job_id="high", arrival_time=F(0), seq=0), F(0))
    started = scheduler.dispatch(F(0))
    assert started[0][0].job_id == "high"


def test_stopping_a_rule_merges_its_queue_into_fallback():
    scheduler = _scheduler(thread_count=1, service_time_ms=F(1000))
    scheduler.set_rules({"a": F(1)}, {"a": F(1)}, F(0))
    # Occupy the only thread so nothing drains
    scheduler.enqueue(Rpc(job_id="x", arrival_time=F(0), seq=0), F(0))
    scheduler.dispatch(F(0))
    for t, job_id, seq in ((1, "a", 0), (2, "b", 0), (3, "a", 1), (4, "b", 1)):
        scheduler.enqueue(Rpc(job_id=job_id, arrival_time=F(t), seq=seq), F(t))

    scheduler.set_rules({}, {}, F(5))

    assert "a" not in scheduler.rules
    assert [(rpc.job_id, rpc.seq) for rpc in scheduler.fallback] == [("a", 0), ("b", 0), ("a", 1), ("b", 1)]
    assert scheduler.queue_depth("a") == 2
    assert scheduler.queued() == 4


def test_recreated_rule_ignores_stale_heap_entries():
    events = []
    scheduler = _scheduler(thread_count=1, trace_sink=events.append)
    scheduler.set_rules({"a": F(10)}, {"a": F(1)}, F(0))
    scheduler.enqueue(Rpc(job_id="a", arrival_time=F(0), seq=0), F(0))
    scheduler.set_rules({}, {}, F(0))
    scheduler.set_rules({"a": F(10)}, {"a": F(1)}, F(0))

    started = scheduler.dispatch(F(0))

    assert [rpc.job_id for rpc, _ in started] == ["a"]
    assert events[0].queue == FALLBACK
    assert scheduler.queued() == 0


def test_rules_follow_plan_grants():
    ledger = JobLedger()
    scheduler = _scheduler(ledger=ledger)
    for seq in range(3):
        scheduler.enqueue(Rpc(job_id="busy", arrival_time=F(0), seq=seq, nodes=3), F(0))
    scheduler.enqueue(Rpc(job_id="light", arrival_time=F(0), seq=0, nodes=1), F(0))
    assert ledger.stats.demand == {"busy": 3, "light": 1}

    plan = allocate_step(BUDGET, ledger.snapshot_active(0), 0)
    scheduler.apply_rules(plan, 100, F(100))

    assert plan.grants == {"busy": 75, "light": 25}
    assert scheduler.rate_of("busy") == 750
    assert scheduler.rules.get("busy").priority == F(3, 4)
    assert scheduler.rules.generation == 1


def test_zero_grant_keeps_a_minimal_rule():
    scheduler = _scheduler()
    scheduler.set_rules({"starved": F(0)}, {"starved": F(1)}, F(0))
    assert scheduler.rate_of("starved") == MIN_RULE_RATE


def test_trace_sink_sees_every_dispatch():
    events = []
    scheduler = _scheduler(trace_sink=events.append)
    scheduler.enqueue(Rpc(job_id="a", arrival_time=F(0), seq=0), F(0))
    scheduler.dispatch(F(0))
    assert len(events) == 1
    assert events[0].queue == FALLBACK
    assert scheduler.dispatched == scheduler.enqueued == 1


def test_enqueue_time_must_match_arrival():
    scheduler = _scheduler()
    with pytest.raises(ContractViolationError):
        scheduler.enqueue(Rpc(job_id="a", arrival_time=F(5), seq=0), F(0))


def test_no_wakeup_while_all_threads_busy():
    scheduler = _scheduler(thread_count=1)
    scheduler.set_rules({"a": F(10)}, {"a": F(1)}, F(0))
    for seq in range(5):
        scheduler.enqueue(Rpc(job_id="a", arrival_time=F(0), seq=seq), F(0))
    scheduler.dispatch(F(0))
    assert scheduler.next_wakeup(F(0)) is None


def test_saturated_queues_share_in_rate_proportion():
    scheduler = _scheduler()
    scheduler.set_rules({"fast": F(30), "slow": F(10)}, {"fast": F(3, 4), "slow": F(1, 4)}, F(0))
    arrivals = [Rpc(job_id=job_id, arrival_time=F(0), seq=seq) for job_id in ("fast", "slow") for seq in range(500)]

    served = _drive(scheduler, 10000, arrivals)
    counts = {"fast": 0, "slow": 0}
    for start, rpc in served:
        if start < 10000:
            counts[rpc.job_id] += 1

    assert abs(counts["fast"] - 300) <= 3
    assert abs(counts["slow"] - 100) <= 3


def test_fallback_is_limited_by_threads_only():
    # One thread at 10 ms per RPC serves 100 RPC/s
    scheduler = _scheduler(thread_count=1, service_time_ms=F(10))
    arrivals = [Rpc(job_id="free", arrival_time=F(5 * seq), seq=seq) for seq in range(400)]

    served = _drive(scheduler, 1000, arrivals)

    assert sum(1 for start, _ in served if start < 1000) == 100
