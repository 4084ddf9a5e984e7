from fractions import Fraction

import pytest

from app.errors import ContractViolationError, ScenarioValidationError
from app.models.schemas import ContinuousPattern, JobSpec, PeriodicBurstPattern
from app.utils.workload import FREQUENCY_SWEEP_MS, builtin_scenarios, generate_arrivals, to_ms


def _job(*processes, **kwargs):
    options = {"job_id": "job1", "nodes": 1}
    options.update(kwargs)
    return JobSpec(processes=list(processes), **options)


def test_to_ms_is_exact():
    assert to_ms(0.35) == 350
    assert to_ms(2.5) == Fraction(2500)


class TestContinuous:
    def test_fixed_spacing(self):
        arrivals = generate_arrivals(_job(ContinuousPattern(rate_rpc_s=100)), 1.0, seed=1)
        assert len(arrivals) == 100
        assert arrivals[0].arrival_time == 0
        assert arrivals[1].arrival_time - arrivals[0].arrival_time == 10
        assert arrivals[-1].arrival_time == 990

    def test_start_and_delay_shift_the_stream(self):
        job = _job(ContinuousPattern(rate_rpc_s=10, start_delay_s=0.5), start_s=2.0)
        arrivals = generate_arrivals(job, 3.0, seed=1)
        assert arrivals[0].arrival_time == 2500
        assert len(arrivals) == 5

    def test_jitter_is_seeded(self):
        job = _job(ContinuousPattern(rate_rpc_s=100, jitter=0.1))
        first = [rpc.arrival_time for rpc in generate_arrivals(job, 2.0, seed=7)]
        again = [rpc.arrival_time for rpc in generate_arrivals(job, 2.0, seed=7)]
        other = [rpc.arrival_time for rpc in generate_arrivals(job, 2.0, seed=8)]

        assert first == again
        assert first != other
        assert first == sorted(first)
        assert all(0 <= t < 2000 for t in first)

    def test_jitter_stays_within_bound(self):
        job = _job(ContinuousPattern(rate_rpc_s=100, jitter=0.1))
        for k, rpc in enumerate(generate_arrivals(job, 1.0, seed=3)):
            assert abs(rpc.arrival_time - 10 * k) <= 1


def test_bursts_arrive_back_to_back():
    job = _job(PeriodicBurstPattern(burst_rpcs=20, interval_s=5, phase_s=1))
    arrivals = generate_arrivals(job, 11.0, seed=1)
    assert len(arrivals) == 40
    assert {rpc.arrival_time for rpc in arrivals} == {1000, 6000}


def test_volume_cutoff_ends_the_job():
    job = _job(ContinuousPattern(rate_rpc_s=100), total_volume_tokens=50)
    arrivals = generate_arrivals(job, 10.0, seed=1)
    assert len(arrivals) == 50
    assert arrivals[-1].arrival_time == 490


def test_mixed_processes_are_merged_in_time_order():
    job = _job(
        PeriodicBurstPattern(burst_rpcs=3, interval_s=1, phase_s=0.25),
        ContinuousPattern(rate_rpc_s=10),
        nodes=4,
    )
    arrivals = generate_arrivals(job, 1.0, seed=1)
    times = [rpc.arrival_time for rpc in arrivals]

    assert times == sorted(times)
    assert [rpc.seq for rpc in arrivals] == list(range(13))
    assert all(rpc.nodes == 4 and rpc.job_id == "job1" for rpc in arrivals)


def test_mapping_input_is_validated():
    spec = {"job_id": "job1", "nodes": 2, "processes": [{"kind": "continuous", "rate_rpc_s": 10}]}
    assert len(generate_arrivals(spec, 1.0, seed=1)) == 10


def test_malformed_mapping_is_rejected():
    with pytest.raises(ScenarioValidationError) as excinfo:
        generate_arrivals({"job_id": "job1", "nodes": 0, "processes": []}, 1.0, seed=1)
    assert excinfo.value.key_path


def test_horizon_must_pass_job_start():
    job = _job(ContinuousPattern(rate_rpc_s=10), start_s=5)
    with pytest.raises(ContractViolationError):
        generate_arrivals(job, 5.0, seed=1)


class TestBuiltins:
    def test_names(self, builtins):
        assert sorted(builtins) == ["sc1", "sc2", "sc3", "sc4-freq"]

    def test_sc1_nodes_give_the_priority_split(self, builtins):
        assert builtins["sc1"].job_nodes() == {"job1": 10, "job2": 10, "job3": 30, "job4": 50}

    def test_sc2_mixes_bursty_and_continuous_jobs(self, builtins):
        jobs = {job.job_id: job for job in builtins["sc2"].jobs}
        assert [job.nodes for job in jobs.values()] == [30, 30, 30, 10]
        assert all(isinstance(jobs[job_id].processes[0], PeriodicBurstPattern) for job_id in ("job1", "job2", "job3"))
        assert isinstance(jobs["job4"].processes[0], ContinuousPattern)

    def test_sc3_time_scale_compresses_the_phases(self, builtins):
        scaled = builtins["sc3"].scaled()
        assert scaled.duration_s == 30
        assert scaled.time_scale == 1.0
        delays = [job.processes[1].start_delay_s for job in scaled.jobs[:3]]
        assert delays == [5.0, 12.5, 20.0]
        assert scaled.jobs[0].processes[0].interval_s == 1.5

    def test_sc4_sweeps_the_interval(self, builtins):
        sweep = builtins["sc4-freq"]
        assert sweep.controller.sweep_interval_ms == FREQUENCY_SWEEP_MS
        assert [job.job_id for job in sweep.jobs] == [job.job_id for job in builtins["sc3"].jobs]
