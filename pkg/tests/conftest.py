from fractions import Fraction
from typing import List, NamedTuple, Tuple
from unittest.mock import patch

import pytest

from app.models.allocation import AllocationPlan, JobInput, OstBudget
from app.models.schemas import ControllerMode
from app.services.simulator import RunResult, run
from app.utils.allocation import allocate_step
from app.utils.workload import builtin_scenarios


class BuiltinRun(NamedTuple):
    """A simulated builtin plus every allocation step it took."""
    result: RunResult
    steps: List[Tuple[OstBudget, List[JobInput], AllocationPlan]]


@pytest.fixture
def budget():
    """1000 tok/s over 100 ms: 100 tokens per interval."""
    return OstBudget(max_token_rate=1000, interval_ms=100)


@pytest.fixture
def make_job():
    def _make(job_id, nodes=1, demand=10, prev_alloc=None, record=0, remainder=Fraction(0)):
        return JobInput(
            job_id=job_id,
            nodes=nodes,
            demand=demand,
            prev_alloc=prev_alloc,
            record=record,
            remainder=remainder,
        )

    return _make


@pytest.fixture(scope="session")
def builtins():
    return builtin_scenarios()


def run_builtin(name, mode, interval_ms=None) -> BuiltinRun:
    scenario = builtin_scenarios()[name]
    update = {"mode": mode}
    if interval_ms is not None:
        update["interval_ms"] = interval_ms
    controller = scenario.controller.model_copy(update=update)
    steps = []

    def recording_step(budget, jobs, interval_index=0, reclaim_bound_mode="pre"):
        plan = allocate_step(budget, jobs, interval_index, reclaim_bound_mode)
        steps.append((budget, list(jobs), plan))
        return plan

    with patch("app.services.simulator.allocate_step", recording_step):
        result = run(scenario.model_copy(update={"controller": controller}))
    return BuiltinRun(result, steps)


@pytest.fixture(scope="session")
def sc1_adaptbf():
    return run_builtin("sc1", ControllerMode.ADAPTBF)


@pytest.fixture(scope="session")
def sc1_nobw():
    return run_builtin("sc1", ControllerMode.NOBW)


@pytest.fixture(scope="session")
def sc2_adaptbf():
    return run_builtin("sc2", ControllerMode.ADAPTBF)


@pytest.fixture(scope="session")
def sc2_nobw():
    return run_builtin("sc2", ControllerMode.NOBW)


@pytest.fixture(scope="session")
def sc3_adaptbf():
    return run_builtin("sc3", ControllerMode.ADAPTBF)
