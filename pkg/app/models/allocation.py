"""
Domain types for the token allocation step.

All intra-step quantities are exact ``Fraction``s; grants and records are
integers.
"""
from fractions import Fraction
from typing import Any, Dict, FrozenSet, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class JobInput(BaseModel):
    """One active job as seen by the allocator for a single interval."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    job_id: str = Field(..., description="Opaque job identifier")
    nodes: int = Field(..., ge=1, description="Compute nodes held by the job")
    demand: int = Field(..., ge=0, description="RPC arrivals observed in the last interval")
    prev_alloc: Optional[int] = Field(None, ge=0, description="Tokens granted last interval")
    record: int = Field(0, description="Tokens lent (+) or borrowed (-)")
    remainder: Fraction = Field(Fraction(0), description="Carried fractional tokens")

    @field_validator("remainder", mode="before")
    @classmethod
    def _coerce_remainder(cls, value: Any) -> Fraction:
        value = Fraction(value)
        if not 0 <= value < 1:
            raise ValueError(f"remainder must be in [0, 1), got {value}")
        return value


class OstBudget(BaseModel):
    """Token budget of one storage target."""
    model_config = ConfigDict(frozen=True)

    max_token_rate: int = Field(..., gt=0, description="T_i in tokens/second")
    interval_ms: int = Field(..., gt=0, description="Observation period in milliseconds")

    @model_validator(mode="after")
    def _at_least_one_token(self) -> "OstBudget":
        if self.tokens_per_interval < 1:
            raise ValueError(
                f"budget of {self.max_token_rate} tok/s over {self.interval_ms} ms "
                "yields no whole token per interval"
            )
        return self

    @property
    def exact_tokens(self) -> Fraction:
        """T_i * dt as an exact rational."""
        return Fraction(self.max_token_rate * self.interval_ms, 1000)

    @property
    def tokens_per_interval(self) -> int:
        return (self.max_token_rate * self.interval_ms) // 1000


class LedgerUpdate(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    record: int
    remainder: Fraction


class PhaseAllocation(BaseModel):
    """Intermediates of every phase, kept for diagnostics and tests."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    priorities: Dict[str, Fraction] = Field(default_factory=dict)
    initial: Dict[str, int] = Field(default_factory=dict)
    redistributed: Dict[str, int] = Field(default_factory=dict)
    recompensated: Dict[str, int] = Field(default_factory=dict)
    utilization: Dict[str, Fraction] = Field(default_factory=dict)
    # None marks a lender holding zero tokens after redistribution
    future_utilization: Dict[str, Optional[Fraction]] = Field(default_factory=dict)
    surplus: Dict[str, int] = Field(default_factory=dict)
    total_surplus: int = 0
    factors: Dict[str, Fraction] = Field(default_factory=dict)
    records_redistributed: Dict[str, int] = Field(default_factory=dict)
    lenders: FrozenSet[str] = frozenset()
    borrowers: FrozenSet[str] = frozenset()
    reclaim_coefficient: Fraction = Fraction(0)
    reclaim: Dict[str, int] = Field(default_factory=dict)
    total_reclaim: int = 0
    records: Dict[str, int] = Field(default_factory=dict)
    remainders: Dict[str, Fraction] = Field(default_factory=dict)
    surplus_held: bool = False
    priority_fallback: bool = False


class AllocationPlan(BaseModel):
    """Output of one controller step."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    interval_index: int = Field(0, ge=0)
    budget_tokens: int
    grants: Dict[str, int]
    ledger_updates: Dict[str, LedgerUpdate]
    phases: PhaseAllocation

    def record_deltas(self, before: Dict[str, int]) -> Dict[str, int]:
        """Per-job record change relative to ``before``."""
        return {
            job_id: update.record - before.get(job_id, 0)
            for job_id, update in self.ledger_updates.items()
        }
