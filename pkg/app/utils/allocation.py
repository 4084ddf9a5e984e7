"""
Adaptive token allocation for one storage target.

A step runs three phases over the jobs active in the last observation
interval:

1. priority-based initial allocation (priority = share of compute nodes),
2. redistribution of surplus tokens to jobs by distribution factor, with the
   lending/borrowing recorded per job,
3. re-compensation, where jobs that lent tokens reclaim part of them from
   jobs that borrowed.

Each phase is apportioned to whole tokens with carried remainders
(see ``app.utils.remainders``). Everything here is pure and deterministic.
"""
import logging
import math
from fractions import Fraction
from typing import Dict, Mapping, NamedTuple, Optional, Sequence, Set, Tuple

from app.errors import ContractViolationError, EmptyActiveSetError
from app.models.allocation import AllocationPlan, JobInput, LedgerUpdate, OstBudget, PhaseAllocation
from app.utils.remainders import apply_remainders

# Configure logging
logger = logging.getLogger(__name__)

ZERO = Fraction(0)
ONE = Fraction(1)

RECLAIM_BOUND_MODES = ("pre", "post")


class PhaseResult(NamedTuple):
    """Allocations, records and remainders after one phase."""
    alloc: Dict[str, int]
    records: Dict[str, int]
    remainders: Dict[str, Fraction]
    degenerate: bool = False


class ReclaimResult(NamedTuple):
    per_job: Dict[str, int]
    total: int
    alloc: Dict[str, int]
    records: Dict[str, int]


def compute_priorities(jobs: Sequence[JobInput]) -> Dict[str, Fraction]:
    """
    Priority of each job as its share of compute nodes among the active set.

    Args:
        jobs: Active jobs

    Returns:
        Exact rational priority per job id, summing to 1
    """
    if not jobs:
        raise EmptyActiveSetError("no active jobs to prioritize")
    total_nodes = 0
    for job in jobs:
        if job.nodes < 1:
            raise ContractViolationError(f"job {job.job_id} has {job.nodes} nodes")
        total_nodes += job.nodes
    return {job.job_id: Fraction(job.nodes, total_nodes) for job in jobs}


def initial_allocation(budget: OstBudget, priorities: Mapping[str, Fraction]) -> Dict[str, Fraction]:
    """
    Raw (pre-apportionment) tokens per job for the next interval: T_i * p_x * dt.

    Args:
        budget: Storage target budget
        priorities: Priority per job, summing to 1

    Returns:
        Rational token amount per job
    """
    if sum(priorities.values(), ZERO) != 1:
        raise ContractViolationError("priorities must sum to 1")
    tokens = budget.exact_tokens
    return {job_id: tokens * priority for job_id, priority in priorities.items()}


def utilization_score(demand: int, prev_alloc: Optional[int]) -> Fraction:
    """
    How well a job used last interval's grant: d_x / alpha_x^{t-1}.

    A job without a usable previous grant scores 1 when it has demand and 0
    otherwise.
    """
    if demand < 0:
        raise ContractViolationError(f"demand must be >= 0, got {demand}")
    if not prev_alloc:
        return ONE if demand > 0 else ZERO
    return Fraction(demand, prev_alloc)


def compute_surplus(alloc: Mapping[str, int], demand: Mapping[str, int]) -> Tuple[Dict[str, int], int]:
    """
    Tokens granted beyond observed demand.

    Args:
        alloc: Integer allocation per job for this step
        demand: Observed demand per job

    Returns:
        Tuple of (surplus per job, total surplus)
    """
    surplus = {job_id: max(0, tokens - demand[job_id]) for job_id, tokens in alloc.items()}
    return surplus, sum(surplus.values())


def distribution_factor(u: Fraction, p: Fraction) -> Fraction:
    """Deficit jobs (u > 1) get u + u*p, everyone else u*p."""
    if u > 1:
        return u + u * p
    return u * p


def _proportional_shares(
    weights: Mapping[str, Fraction], members: Sequence[str], total: int
) -> Dict[str, Fraction]:
    weight_sum = sum((weights[job_id] for job_id in members), ZERO)
    return {job_id: weights[job_id] / weight_sum * total for job_id in members}


def redistribute(
    alloc: Mapping[str, int],
    surplus: Mapping[str, int],
    total_surplus: int,
    factors: Mapping[str, Fraction],
    records: Mapping[str, int],
    remainders: Mapping[str, Fraction],
) -> PhaseResult:
    """
    Hand the surplus pool back out by each job's share of the distribution factor.

    Whatever a job gives up is credited to its record; whatever it receives is
    debited. Shares are apportioned to whole tokens with carried remainders.

    Args:
        alloc: Integer allocation per job after the initial phase
        surplus: Surplus per job
        total_surplus: Sum of ``surplus``
        factors: Distribution factor per job
        records: Record per job before this step
        remainders: Carried remainder per job

    Returns:
        PhaseResult with post-redistribution allocation, records and remainders
    """
    if total_surplus == 0:
        return PhaseResult(dict(alloc), dict(records), dict(remainders))

    members = list(alloc)
    if sum((factors[job_id] for job_id in members), ZERO) == 0:
        # Nobody used any tokens: each surplus stays with its owner and nothing is lent.
        logger.warning(f"Surplus of {total_surplus} tokens not redistributed: all distribution factors are zero")
        return PhaseResult(dict(alloc), dict(records), dict(remainders), degenerate=True)

    kept = {job_id: tokens - surplus[job_id] for job_id, tokens in alloc.items()}
    raw_shares = _proportional_shares(factors, members, total_surplus)
    shares, new_remainders = apply_remainders(raw_shares, remainders, total_surplus)
    new_alloc = {job_id: kept[job_id] + shares[job_id] for job_id in members}
    new_records = {job_id: records[job_id] + surplus[job_id] - shares[job_id] for job_id in members}
    return PhaseResult(new_alloc, new_records, new_remainders)


def eligible_sets(
    records_before: Mapping[str, int], records_after: Mapping[str, int]
) -> Tuple[Set[str], Set[str]]:
    """
    Lenders and borrowers that kept their sign through redistribution.

    Returns:
        Tuple of (positive-record jobs, negative-record jobs)
    """
    lenders = {job_id for job_id, record in records_before.items() if record > 0 and records_after[job_id] > 0}
    borrowers = {job_id for job_id, record in records_before.items() if record < 0 and records_after[job_id] < 0}
    return lenders, borrowers


def future_utilization(demand: int, alloc_rd: int) -> Optional[Fraction]:
    """Expected utilization next interval assuming demand persists; None when no tokens are held."""
    if alloc_rd == 0:
        return None
    return Fraction(demand, alloc_rd)


def reclaim_coefficient(lender_stats: Sequence[Tuple[Fraction, Fraction, Optional[Fraction]]]) -> Fraction:
    """
    Aggregate portion of a borrower's allocation that lenders may reclaim.

    Args:
        lender_stats: (priority, utilization, future utilization) of each lender;
            a future utilization of None is unbounded and gives no headroom

    Returns:
        Single coefficient applied to every borrower
    """
    coefficient = ZERO
    for priority, utilization, future in lender_stats:
        headroom = ZERO if future is None or future >= 1 else ONE - future
        coefficient += priority * (max(ONE, utilization) + headroom) / 2
    return coefficient


def reclaim(
    borrowers: Set[str],
    records: Mapping[str, int],
    records_rd: Mapping[str, int],
    alloc_rd: Mapping[str, int],
    coefficient: Fraction,
    bound_mode: str = "pre",
) -> ReclaimResult:
    """
    Take tokens back from borrowers.

    Each borrower gives up floor(C * alpha_RD), bounded by what it borrowed and
    by what it holds.

    Args:
        borrowers: Negative-record jobs eligible as sources
        records: Records before this step (bound for mode ``pre``)
        records_rd: Records after redistribution (bound for mode ``post``)
        alloc_rd: Allocation after redistribution
        coefficient: Reclaim coefficient
        bound_mode: ``pre`` bounds by |r_x|, ``post`` by |r_x,RD|

    Returns:
        ReclaimResult with per-job and total reclaim, updated allocation and records
    """
    if bound_mode not in RECLAIM_BOUND_MODES:
        raise ContractViolationError(f"unknown reclaim bound mode {bound_mode!r}")
    bound_source = records if bound_mode == "pre" else records_rd
    new_alloc = dict(alloc_rd)
    new_records = dict(records_rd)
    per_job: Dict[str, int] = {}
    for job_id in sorted(borrowers):
        held = alloc_rd[job_id]
        amount = min(abs(bound_source[job_id]), math.floor(coefficient * held), held)
        amount = max(0, amount)
        per_job[job_id] = amount
        new_alloc[job_id] = held - amount
        new_records[job_id] = records_rd[job_id] + amount
    return ReclaimResult(per_job, sum(per_job.values()), new_alloc, new_records)


def recompensate(
    lenders: Set[str],
    factors: Mapping[str, Fraction],
    alloc: Mapping[str, int],
    records: Mapping[str, int],
    total_reclaim: int,
    remainders: Mapping[str, Fraction],
    priorities: Optional[Mapping[str, Fraction]] = None,
) -> PhaseResult:
    """
    Give reclaimed tokens to lenders by their share of the distribution factor.

    Args:
        lenders: Positive-record jobs
        factors: Distribution factor per job
        alloc: Allocation after reclaim
        records: Records after reclaim
        total_reclaim: Tokens reclaimed from borrowers
        remainders: Carried remainder per job
        priorities: Used for priority-proportional shares when every lender's factor is zero

    Returns:
        PhaseResult with post-recompensation allocation, records and remainders
    """
    new_alloc = dict(alloc)
    new_records = dict(records)
    if total_reclaim == 0 or not lenders:
        return PhaseResult(new_alloc, new_records, dict(remainders))

    members = sorted(lenders)
    weights: Mapping[str, Fraction] = factors
    fallback = False
    if sum((factors[job_id] for job_id in members), ZERO) == 0:
        if priorities is None:
            raise ContractViolationError("priorities required when every lender factor is zero")
        logger.warning(f"Reclaimed {total_reclaim} tokens shared by priority: all lender factors are zero")
        weights = priorities
        fallback = True

    raw_shares = _proportional_shares(weights, members, total_reclaim)
    lender_remainders = {job_id: remainders[job_id] for job_id in members}
    shares, settled = apply_remainders(raw_shares, lender_remainders, total_reclaim)
    new_remainders = dict(remainders)
    new_remainders.update(settled)
    for job_id in members:
        new_alloc[job_id] += shares[job_id]
        new_records[job_id] -= shares[job_id]
    return PhaseResult(new_alloc, new_records, new_remainders, degenerate=fallback)


def allocate_step(
    budget: OstBudget,
    jobs: Sequence[JobInput],
    interval_index: int = 0,
    reclaim_bound_mode: str = "pre",
) -> AllocationPlan:
    """
    Run one full allocation step over the active jobs.

    Args:
        budget: Storage target budget
        jobs: Jobs active during the last interval
        interval_index: Step counter, carried into the plan
        reclaim_bound_mode: ``pre`` or ``post`` record bound for reclaim

    Returns:
        AllocationPlan with whole-token grants summing to the interval budget
    """
    if not jobs:
        raise EmptyActiveSetError(f"interval {interval_index}: no active jobs")
    seen: Set[str] = set()
    for job in jobs:
        if job.job_id in seen:
            raise ContractViolationError(f"job {job.job_id} listed twice")
        seen.add(job.job_id)

    tokens = budget.tokens_per_interval
    demand = {job.job_id: job.demand for job in jobs}
    records = {job.job_id: job.record for job in jobs}
    carried = {job.job_id: job.remainder for job in jobs}

    # Phase 1: priority-based initial allocation
    priorities = compute_priorities(jobs)
    raw = initial_allocation(budget, priorities)
    if budget.exact_tokens != tokens:
        scale = Fraction(tokens) / budget.exact_tokens
        raw = {job_id: amount * scale for job_id, amount in raw.items()}
    alloc, remainders = apply_remainders(raw, carried, tokens)

    # Phase 2: surplus redistribution
    utilization = {job.job_id: utilization_score(job.demand, job.prev_alloc) for job in jobs}
    surplus, total_surplus = compute_surplus(alloc, demand)
    factors = {job_id: distribution_factor(utilization[job_id], priorities[job_id]) for job_id in alloc}
    redistributed = redistribute(alloc, surplus, total_surplus, factors, records, remainders)

    # Phase 3: re-compensation
    lenders, borrowers = eligible_sets(records, redistributed.records)
    future: Dict[str, Optional[Fraction]] = {}
    coefficient = ZERO
    reclaimed: Dict[str, int] = {}
    total_reclaim = 0
    final = redistributed
    fallback = False
    if lenders and borrowers:
        for job_id in lenders:
            future[job_id] = future_utilization(demand[job_id], redistributed.alloc[job_id])
        coefficient = reclaim_coefficient(
            [(priorities[job_id], utilization[job_id], future[job_id]) for job_id in sorted(lenders)]
        )
        taken = reclaim(
            borrowers, records, redistributed.records, redistributed.alloc, coefficient, reclaim_bound_mode
        )
        reclaimed = taken.per_job
        total_reclaim = taken.total
        final = recompensate(
            lenders, factors, taken.alloc, taken.records, total_reclaim, redistributed.remainders, priorities
        )
        fallback = final.degenerate

    phases = PhaseAllocation(
        priorities=priorities,
        initial=alloc,
        redistributed=redistributed.alloc,
        recompensated=final.alloc,
        utilization=utilization,
        future_utilization=future,
        surplus=surplus,
        total_surplus=total_surplus,
        factors=factors,
        records_redistributed=redistributed.records,
        lenders=frozenset(lenders),
        borrowers=frozenset(borrowers),
        reclaim_coefficient=coefficient,
        reclaim=reclaimed,
        total_reclaim=total_reclaim,
        records=final.records,
        remainders=final.remainders,
        surplus_held=redistributed.degenerate,
        priority_fallback=fallback,
    )
    updates = {
        job_id: LedgerUpdate(record=final.records[job_id], remainder=final.remainders[job_id])
        for job_id in final.alloc
    }
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(
            f"Step {interval_index}: {len(jobs)} jobs, budget {tokens}, surplus {total_surplus}, "
            f"reclaim {total_reclaim}, grants {final.alloc}"
        )
    return AllocationPlan(
        interval_index=interval_index,
        budget_tokens=tokens,
        grants=final.alloc,
        ledger_updates=updates,
        phases=phases,
    )
