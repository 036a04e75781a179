"""Scenario runner and CLI: validation, exit codes, artifacts."""

import csv
import json
from pathlib import Path

import pytest

from gridecon.cli import main
from gridecon.scenario import (
    EXIT_INVARIANT,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_VALIDATION,
    ScenarioParseError,
    load_scenario,
    run_scenario,
    validate_scenario,
)

REPO = Path(__file__).resolve().parent.parent
BELLE = REPO / "scenarios" / "belle.toml"
CLUSTER = REPO / "scenarios" / "cluster.toml"
NEWSWIRE_PLAN = REPO / "scenarios" / "plans" / "newswire.plan"


MINI_SCENARIO = """
seed = 1
end_time = 1000.0

[[sites]]
id = "s"

[[accounts]]
owner = "user"
balance = 1000.0

[[accounts]]
owner = "prov"
balance = 0.0

[[resources]]
id = "R1"
site = "s"
n_pe = 2
pe_rating_mips = 100.0
base_price = 1.0
provider_account = "prov"
apps = ["app"]

[[services]]
resource = "R1"

[[sessions]]
name = "mini"
consumer = "user"
home_site = "s"
app = "app"
strategy = "{strategy}"
deadline = {deadline}
budget = {budget}
plan = '''
parameter i integer range 1 4 step 1;
task main
  length 100
endtask
'''
"""


def write_mini(tmp_path, strategy="cost", deadline=100.0, budget=500.0):
    path = tmp_path / "mini.toml"
    path.write_text(MINI_SCENARIO.format(strategy=strategy, deadline=deadline,
                                         budget=budget))
    return path


def test_bundled_belle_validates_clean():
    assert validate_scenario(BELLE) == []


def test_bundled_belle_runs_all_hundred_jobs(tmp_path):
    code, summary = run_scenario(BELLE, tmp_path)
    assert code == EXIT_OK
    session = summary["sessions"][0]
    assert session["jobs_done"] == 100
    assert session["deadline_met"] is True
    assert summary["conservation_ok"] is True
    rows = list(csv.DictReader(open(tmp_path / "jobs.csv")))
    assert len(rows) == 100
    assert all(row["status"] == "done" for row in rows)
    # workload shape: 100 jobs with one 3 MB input each, 300 MB total
    ledger = list(csv.DictReader(open(tmp_path / "ledger.csv")))
    assert len(ledger) == 100
    assert sum(float(r["data_mb"]) for r in ledger) == pytest.approx(100 * (3.0 + 1.0))


def test_bundled_cluster_scenario_runs(tmp_path):
    code, summary = run_scenario(CLUSTER, tmp_path)
    assert code == EXIT_OK
    assert summary["sessions"][0]["jobs_done"] == 4


def test_mini_scenario_all_strategies(tmp_path):
    for strategy in ("cost", "time", "costtime"):
        out = tmp_path / strategy
        code, summary = run_scenario(write_mini(tmp_path, strategy=strategy), out)
        assert code == EXIT_OK, summary
        assert summary["sessions"][0]["jobs_done"] == 4


def test_strategy_override_flag(tmp_path):
    path = write_mini(tmp_path)
    code, summary = run_scenario(path, tmp_path / "o", strategy="time")
    assert code == EXIT_OK
    assert summary["sessions"][0]["jobs_done"] == 4


def test_dangling_file_reference_exits_3(tmp_path):
    text = MINI_SCENARIO.format(strategy="cost", deadline=100.0, budget=500.0)
    text = text.replace("  length 100", '  input "missing-${i}.dat" 1.0\n  length 100')
    path = tmp_path / "dangling.toml"
    path.write_text(text)
    code, summary = run_scenario(path, tmp_path / "out")
    assert code == EXIT_VALIDATION
    assert any("missing-1.dat" in f for f in summary["findings"])


def test_negative_budget_finding_names_session(tmp_path):
    path = write_mini(tmp_path, budget=-5.0)
    findings = validate_scenario(path)
    assert any("mini" in f and "budget" in f for f in findings)


def test_plan_syntax_error_finding_has_line_number(tmp_path):
    text = MINI_SCENARIO.format(strategy="cost", deadline=100.0, budget=500.0)
    text = text.replace("  length 100", "  bogus line")
    path = tmp_path / "badplan.toml"
    path.write_text(text)
    findings = validate_scenario(path)
    assert any("line" in f for f in findings)
    code, _ = run_scenario(path, tmp_path / "out")
    assert code == EXIT_VALIDATION


def test_validation_matches_run_exit_semantics(tmp_path):
    cases = [
        write_mini(tmp_path),
        BELLE,
        CLUSTER,
    ]
    bad = tmp_path / "bad.toml"
    bad.write_text(MINI_SCENARIO.format(strategy="warp", deadline=100.0, budget=5.0))
    cases.append(bad)
    for i, path in enumerate(cases):
        findings = validate_scenario(path)
        code, _ = run_scenario(path, tmp_path / f"v{i}")
        assert (findings == []) == (code != EXIT_VALIDATION)


def test_toml_garbage_exits_2(tmp_path):
    path = tmp_path / "garbage.toml"
    path.write_text("this is not [ toml")
    code, summary = run_scenario(path, tmp_path / "out")
    assert code == EXIT_PARSE
    with pytest.raises(ScenarioParseError):
        load_scenario(path)


def test_missing_file_exits_2(tmp_path):
    code, _ = run_scenario(tmp_path / "nope.toml", tmp_path / "out")
    assert code == EXIT_PARSE


def test_infeasible_session_exits_1_with_reason(tmp_path):
    path = write_mini(tmp_path, deadline=0.5)  # capacity for 0 of 4 jobs
    code, summary = run_scenario(path, tmp_path / "out")
    assert code == 1
    assert summary["sessions"][0]["jobs_failed"] == 4
    assert summary["sessions"][0]["failure_reason"] == "deadline-infeasible"


def test_seed_flag_reproduces_events_csv(tmp_path):
    path = write_mini(tmp_path)
    for d in ("a", "b"):
        code, _ = run_scenario(path, tmp_path / d, seed=42, trace=True)
        assert code == EXIT_OK
    assert (tmp_path / "a" / "events.csv").read_bytes() == \
        (tmp_path / "b" / "events.csv").read_bytes()


def test_summary_json_key_set(tmp_path):
    code, _ = run_scenario(write_mini(tmp_path), tmp_path / "out")
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert set(summary) == {"sessions", "conservation_ok", "events", "runtime_ms"}
    session = summary["sessions"][0]
    assert {"name", "jobs_total", "jobs_done", "jobs_failed", "makespan",
            "total_cost", "deadline_met", "budget_respected", "per_resource",
            "failure_reason"} <= set(session)


def test_csv_headers_are_exact(tmp_path):
    code, _ = run_scenario(write_mini(tmp_path), tmp_path / "out", trace=True)
    assert code == EXIT_OK
    assert open(tmp_path / "out" / "jobs.csv").readline().strip() == \
        "job,resource,submit,start,finish,compute_cost,data_cost,status"
    assert open(tmp_path / "out" / "ledger.csv").readline().strip() == \
        "time,job,consumer,provider,resource,pe_seconds,data_mb,amount"
    assert open(tmp_path / "out" / "events.csv").readline().strip() == \
        "time,seq,entity,kind,job,resource,value"


def test_cli_run_and_validate_and_expand(tmp_path, capsys):
    assert main(["validate", str(BELLE)]) == 0
    assert main(["run", str(BELLE), "--out", str(tmp_path / "cli")]) == 0
    out = capsys.readouterr().out
    assert "session belle: 100/100 done" in out
    assert main(["expand", str(NEWSWIRE_PLAN)]) == 0
    out = capsys.readouterr().out
    lines = [ln for ln in out.splitlines() if ln.startswith("j0")]
    assert len(lines) == 12


def test_cli_validate_reports_findings(tmp_path, capsys):
    path = write_mini(tmp_path, budget=-5.0)
    assert main(["validate", str(path)]) == EXIT_VALIDATION
    assert "budget" in capsys.readouterr().out


def test_cli_expand_bad_plan_exits_2(tmp_path, capsys):
    plan = tmp_path / "bad.plan"
    plan.write_text("task main\nendtask\n")
    assert main(["expand", str(plan)]) == EXIT_PARSE
