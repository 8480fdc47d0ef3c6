import csv
import io
import json
import shutil
import subprocess

import pytest

from golden_cases import CASES, CONFIGS, cli_args, golden_path
from semimarkov_ldp.cli import run


def call(argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(argv, stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def cfg(name):
    return str(CONFIGS / f"{name}.yaml")


def test_rate_on_stationary_pair_is_zero():
    code, out, _ = call(["rate", "--config", cfg("alternator_rate_stationary")])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    total = [r for r in rows if r["state"] == "total"][0]
    assert float(total["total"]) == 0.0


def test_flow_rate_on_quarter_alternator():
    code, out, _ = call(["flow-rate", "--config", cfg("alternator_flow_rate"), "--format", "records"])
    assert code == 0
    rec = json.loads(out.splitlines()[0])
    assert rec["value"] == pytest.approx(0.153426, abs=1e-5)


def test_row_sum_error_names_row():
    code, out, err = call(["rate", "--config", cfg("bad_row_sum")])
    assert code == 1 and out == ""
    assert "row 1" in err


def test_schema_errors_carry_line_numbers():
    code, _, err = call(["rate", "--config", cfg("bad_schema")])
    assert code == 1
    assert "line 9: run.replicas" in err
    assert "line 10: run.colour" in err


def test_missing_config_file(tmp_path):
    code, _, err = call(["rate", "--config", str(tmp_path / "nope.yaml")])
    assert code == 1 and "nope.yaml" in err


def test_numerical_failure_exits_two(tmp_path):
    text = (CONFIGS / "verify_pair_chain.yaml").read_text().replace("[0.25, 0.1, 0]", "[0.1, 0.1, 0]")
    path = tmp_path / "mass.yaml"
    path.write_text(text)
    code, _, err = call(["verify", "--config", str(path)])
    assert code == 2 and "mass" in err


def test_dry_run_prints_plan_without_running(tmp_path):
    target = tmp_path / "never.csv"
    code, out, _ = call(["simulate", "--config", cfg("mixed3_simulate"), "--dry-run", "--out", str(target),
                         "--seed", "5"])
    assert code == 0 and not target.exists()
    plan = json.loads(out)
    assert plan["seed"] == 5 and plan["command"] == "simulate"


def test_trajectory_records_use_state_labels():
    code, out, _ = call(["simulate", "--config", cfg("gamma3_trajectory"), "--format", "records"])
    assert code == 0
    recs = [json.loads(line) for line in out.splitlines()]
    assert {r["from"] for r in recs} <= {"a", "b", "c"}
    assert all(r["wait"] > 0 for r in recs)


def test_check_commands_report_verdicts():
    for name, verdict in (("birth_death_check", "holds"), ("lattice_check", "holds"), ("graph_check", "fails")):
        code, out, _ = call(["check", "--config", cfg(name), "--format", "records"])
        assert code == 0
        rows = [json.loads(line) for line in out.splitlines()]
        verdicts = [r["value"] for r in rows if r.get("field") == "verdict"]
        assert verdicts and verdicts[0].startswith(verdict), name


@pytest.mark.parametrize("command,name,fmt", CASES, ids=[c[1] for c in CASES])
def test_golden_output_is_byte_identical(command, name, fmt, tmp_path):
    golden = golden_path(name, fmt).read_bytes()
    for workers in (1, 4):
        out = tmp_path / f"{name}-{workers}"
        assert run(cli_args(command, name, fmt, out, workers)) == 0
        assert out.read_bytes() == golden, f"{name} with {workers} workers"


@pytest.mark.skipif(shutil.which("semimarkov-ldp") is None, reason="console script not installed")
def test_console_script_entry_point():
    res = subprocess.run(["semimarkov-ldp", "rate", "--config", cfg("bad_row_sum")], capture_output=True, text=True)
    assert res.returncode == 1 and "row 1" in res.stderr
