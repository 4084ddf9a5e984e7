import csv
import json

import pytest
from click.testing import CliRunner

from app.cli import cli
from app.config import VERSION

SCENARIO = """\
name: cli-small
duration_s: 1
jobs:
  - job_id: a
    nodes: 1
    processes:
      - kind: continuous
        rate_rpc_s: 400
  - job_id: b
    nodes: 3
    processes:
      - kind: continuous
        rate_rpc_s: 900
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def scenario_path(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SCENARIO)
    return path


def _rows(path):
    with path.open(newline="") as handle:
        return list(csv.DictReader(handle))


def test_version(runner):
    result = runner.invoke(cli, ["version"])
    assert result.exit_code == 0
    assert f"v{VERSION}" in result.output


def test_run_writes_timeline_and_summary(runner, scenario_path, tmp_path):
    out_dir = tmp_path / "out"
    result = runner.invoke(cli, ["run", str(scenario_path), "--out-dir", str(out_dir)])
    assert result.exit_code == 0, result.output
    assert "cli-small [adaptbf" in result.output

    timeline = _rows(out_dir / "timeline.csv")
    assert len(timeline) == 20
    late = [row for row in timeline if int(row["time_ms"]) > 100]
    assert {row["granted_tokens"] for row in late if row["job_id"] == "b"} == {"75"}
    summary = _rows(out_dir / "summary.csv")
    assert [row["job_id"] for row in summary] == ["a", "b", "ALL"]


def test_nobw_run_has_no_grants(runner, scenario_path, tmp_path):
    out_dir = tmp_path / "out"
    result = runner.invoke(cli, ["run", str(scenario_path), "--mode", "nobw", "-o", str(out_dir)])
    assert result.exit_code == 0, result.output
    assert all(row["granted_tokens"] == "" for row in _rows(out_dir / "timeline.csv"))


def test_json_summary(runner, scenario_path, tmp_path):
    out_dir = tmp_path / "out"
    result = runner.invoke(cli, ["run", str(scenario_path), "--json", "-o", str(out_dir)])
    assert result.exit_code == 0, result.output
    document = json.loads((out_dir / "summary.json").read_text())
    assert document["scenario"] == "cli-small"
    assert [job["job_id"] for job in document["jobs"]] == ["a", "b"]


def test_baseline_adds_deltas(runner, scenario_path, tmp_path):
    baseline_dir = tmp_path / "nobw"
    runner.invoke(cli, ["run", str(scenario_path), "--mode", "nobw", "-o", str(baseline_dir)])
    out_dir = tmp_path / "adaptbf"
    result = runner.invoke(
        cli, ["run", str(scenario_path), "-o", str(out_dir), "--baseline", str(baseline_dir / "summary.csv")]
    )
    assert result.exit_code == 0, result.output
    rows = {row["job_id"]: row for row in _rows(out_dir / "summary.csv")}
    assert rows["a"]["baseline_throughput_rpc_s"] != ""
    assert rows["b"]["delta_pct"] != ""


def test_parallel_osts_get_their_own_directories(runner, scenario_path, tmp_path):
    out_dir = tmp_path / "out"
    result = runner.invoke(cli, ["run", str(scenario_path), "--parallel-osts", "2", "-o", str(out_dir)])
    assert result.exit_code == 0, result.output
    assert (out_dir / "ost-0" / "timeline.csv").is_file()
    assert (out_dir / "ost-1" / "summary.csv").is_file()


def test_missing_scenario_is_a_usage_error(runner, tmp_path):
    result = runner.invoke(cli, ["run", str(tmp_path / "absent.yaml")])
    assert result.exit_code == 2
    assert "error[E_NOT_FOUND]" in result.output


def test_invalid_scenario_reports_its_location(runner, tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(SCENARIO.replace("rate_rpc_s: 400", "rate_rpc_s: 400\n        burst: true"))
    result = runner.invoke(cli, ["run", str(path)])
    assert result.exit_code == 2
    assert f"error[E_SCENARIO]: {path}:9:9: jobs[0].processes[0].burst: unknown key" in result.output


def test_bad_mode_is_a_usage_error(runner, scenario_path):
    result = runner.invoke(cli, ["run", str(scenario_path), "--mode", "fast"])
    assert result.exit_code == 2
    assert "error[E_USAGE]" in result.output


def test_bad_interval_override(runner, scenario_path):
    result = runner.invoke(cli, ["run", str(scenario_path), "--interval-ms", "0"])
    assert result.exit_code == 2
    assert "error[E_SCENARIO]" in result.output
    assert "controller.interval_ms" in result.output


def test_unknown_builtin_lists_the_valid_names(runner):
    result = runner.invoke(cli, ["builtin", "sc9"])
    assert result.exit_code == 2
    assert "error[E_BUILTIN]" in result.output
    for name in ("sc1", "sc2", "sc3", "sc4-freq"):
        assert name in result.output


@pytest.mark.sim
def test_builtin_materializes_and_runs(runner, tmp_path):
    out_dir = tmp_path / "sc2"
    result = runner.invoke(cli, ["builtin", "sc2", "--mode", "nobw", "-o", str(out_dir)])
    assert result.exit_code == 0, result.output
    assert (out_dir / "sc2.yaml").is_file()
    assert (out_dir / "timeline.csv").is_file()
    assert [row["job_id"] for row in _rows(out_dir / "summary.csv")][-1] == "ALL"


def test_bench_rejects_zero_jobs(runner):
    result = runner.invoke(cli, ["bench", "--jobs", "0"])
    assert result.exit_code == 2
    assert "error[E_USAGE]" in result.output


@pytest.mark.bench
def test_bench_budget_exceeded(runner):
    result = runner.invoke(cli, ["bench", "-n", "5", "--trials", "3", "--assert-budget-us", "0", "--no-scaling"])
    assert result.exit_code == 3
    assert "error[E_BUDGET]" in result.output


@pytest.mark.bench
def test_bench_within_budget(runner):
    result = runner.invoke(cli, ["bench", "-n", "5", "--trials", "3", "--assert-budget-us", "100000000"])
    assert result.exit_code == 0, result.output
    assert "mean step" in result.output
    assert "(pass)" in result.output
