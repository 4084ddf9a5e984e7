from fractions import Fraction
from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, Field


class JobLedgerEntry(BaseModel):
    """Per-job state kept across intervals on one storage target."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    job_id: str
    nodes: int = Field(..., ge=1)
    record: int = 0
    remainder: Fraction = Fraction(0)
    last_alloc: Optional[int] = None
    granted_at: Optional[int] = Field(None, description="Interval index of the last grant")
    idle_intervals: int = Field(0, ge=0)
    created_at: int = Field(0, ge=0, description="Interval index of first sighting")


class IntervalStats(BaseModel):
    """Demand and service counters of one observation interval."""
    interval_index: int = 0
    demand: Dict[str, int] = Field(default_factory=dict)
    served: Dict[str, int] = Field(default_factory=dict)


class EvictionEvent(BaseModel):
    """A ledger entry dropped after staying idle too long."""
    job_id: str
    interval_index: int
    record: int
    idle_intervals: int
