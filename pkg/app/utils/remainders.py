"""
Remainder-carrying integer apportionment.

Each phase of an allocation step produces rational per-job amounts that must
be turned into whole tokens without breaking the phase total. Fractions that
cannot be granted are carried per job into the next phase (and the next
interval), and any mismatch against the total is settled largest remainder
first.
"""
import logging
import math
from fractions import Fraction
from typing import Dict, List, Mapping, Tuple

from app.errors import ContractViolationError

# Configure logging
logger = logging.getLogger(__name__)

ZERO = Fraction(0)


def apply_remainders(
    raw: Mapping[str, Fraction],
    carried: Mapping[str, Fraction],
    total_constraint: int,
) -> Tuple[Dict[str, int], Dict[str, Fraction]]:
    """
    Floor rational amounts into whole tokens while carrying remainders.

    Args:
        raw: Rational amount per job; must sum to ``total_constraint`` exactly
        carried: Remainder carried per job from the previous step, each in [0, 1)
        total_constraint: Whole tokens the grants must add up to

    Returns:
        Tuple of (integer grant per job, new remainder per job)
    """
    if total_constraint < 0:
        raise ContractViolationError(f"total constraint must be >= 0, got {total_constraint}")
    if sum(raw.values(), ZERO) != total_constraint:
        raise ContractViolationError(
            f"raw amounts sum to {sum(raw.values(), ZERO)}, expected {total_constraint}"
        )

    grants: Dict[str, int] = {}
    remainders: Dict[str, Fraction] = {}
    for job_id, amount in raw.items():
        if amount < 0:
            raise ContractViolationError(f"negative raw amount {amount} for job {job_id}")
        previous = carried.get(job_id, ZERO)
        if not 0 <= previous < 1:
            raise ContractViolationError(f"carried remainder {previous} for job {job_id} outside [0, 1)")
        combined = amount + previous
        floored = math.floor(combined)
        grants[job_id] = floored
        remainders[job_id] = combined - floored

    gap = total_constraint - sum(grants.values())
    if gap:
        _settle_largest_remainder(grants, remainders, gap)
    return grants, remainders


def largest_remainder_order(remainders: Mapping[str, Fraction]) -> List[str]:
    """Jobs by remainder descending, ties by ascending job id."""
    return sorted(remainders, key=lambda job_id: (-remainders[job_id], job_id))


def _settle_largest_remainder(grants: Dict[str, int], remainders: Dict[str, Fraction], gap: int) -> None:
    order = largest_remainder_order(remainders)
    size = len(order)
    if size == 0:
        raise ContractViolationError(f"cannot settle a gap of {gap} tokens over no jobs")

    if gap > 0:
        # Leftover tokens: the job with the largest remainder gets one more.
        for position in range(gap):
            job_id = order[position % size]
            grants[job_id] += 1
            remainders[job_id] = max(ZERO, remainders[job_id] - 1)
        return

    # Excess tokens: take one back from the largest remainder holding a token.
    # The lost token is not added to its remainder, which stays in [0, 1).
    excess = -gap
    position = 0
    while excess:
        job_id = order[position % size]
        position += 1
        if grants[job_id] > 0:
            grants[job_id] -= 1
            excess -= 1
    logger.debug(f"Settled excess of {-gap} tokens over {size} jobs")


def quantize_remainder(value: Fraction, resolution: int) -> Fraction:
    """Round a remainder down onto a 1/resolution grid, staying in [0, 1)."""
    if value.denominator <= resolution:
        return value
    return Fraction(math.floor(value * resolution), resolution)
