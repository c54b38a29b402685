import csv
import io
import json
import subprocess
import sys

import pytest

from chernweil.cli import (
    CSV_HEADER,
    SCHEMA_VERSION,
    config_from_dict,
    convergence_passes,
    main,
)
from chernweil.scenarios import ConfigError, ConvergenceRow, ScenarioConfig, run_scenario


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_run_line_zeros_succeeds_with_two_unit_residues(capsys, tmp_path):
    path = tmp_path / "report.json"
    code, out, err = run(capsys, "run", "--scenario", "line_zeros", "--k", "2", "--json", "--out", str(path))
    assert code == 0 and err == ""
    doc = json.loads(out)
    assert doc == json.loads(path.read_text())
    assert doc["schema_version"] == SCHEMA_VERSION == "chernweil.report/1"
    res = [r["residue"] for r in doc["report"]["residues"]]
    assert len(res) == 2 and all(abs(r - 1) <= 2e-2 for r in res)
    assert doc["passed"] is True
    for chk in doc["checks"].values():
        assert "pass" in chk
    assert "[DERIVED" in doc["oracle"]["residues_provenance"]


def test_report_numbers_round_trip_exactly(capsys):
    code, out, _ = run(capsys, "run", "--scenario", "line_zeros", "--k", "1", "--resolution", "64", "--json")
    assert code == 0
    doc = json.loads(out)
    direct = run_scenario(ScenarioConfig("line_zeros", resolution=64, params={"k": 1}))
    assert doc["report"]["residues"][0]["residue"] == direct.report.residues[0].residue
    assert doc["report"]["lhs"] == direct.report.lhs
    again = json.loads(json.dumps(doc))
    assert again == doc


def test_text_output_lists_checks(capsys):
    code, out, _ = run(capsys, "run", "--scenario", "flat")
    assert code == 0
    assert "[PASS] balance" in out


def test_failing_check_exits_with_two(capsys):
    code, out, _ = run(capsys, "run", "--scenario", "line_zeros", "--k", "1", "--resolution", "64",
                       "--quad-nodes", "4")
    assert code == 2
    assert "[FAIL]" in out


def test_too_coarse_resolution_is_a_configuration_error(capsys):
    code, out, err = run(capsys, "run", "--scenario", "line_zeros", "--k", "2", "--resolution", "8")
    assert code == 3 and out == ""
    assert err.startswith("error=config code=3 reason=") and err.count("\n") == 1


def test_four_dimensional_run_needs_the_budget_flag(capsys):
    code, _, err = run(capsys, "run", "--scenario", "s4_instanton")
    assert code == 4
    assert err.startswith("error=budget code=4 ")


@pytest.mark.parametrize("argv", [
    ["run"],
    ["run", "--scenario", "unknown"],
    ["run", "--scenario", "flat", "--eps", "a,b"],
    ["frobnicate"],
    ["convergence", "--scenario", "flat", "--levels", "1"],
])
def test_usage_errors_exit_with_three(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 3
    assert err.startswith("error=config code=3")


def test_config_files(capsys, tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"scenario": "riemann_hurwitz", "resolution": 96, "params": {"d": 2}}))
    code, out, _ = run(capsys, "run", "--config", str(good), "--json")
    assert code == 0
    assert json.loads(out)["config"]["resolution"] == 96
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": "flat", "colour": "blue"}))
    assert run(capsys, "run", "--config", str(bad))[0] == 3
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert run(capsys, "run", "--config", str(broken))[0] == 3
    assert run(capsys, "run", "--config", str(tmp_path / "missing.json"))[0] == 3


def test_config_from_dict_validation():
    cfg = config_from_dict({"scenario": "line_zeros", "eps": [0.2, 0.15], "params": {"k": 1}})
    assert cfg.eps == (0.2, 0.15)
    with pytest.raises(ConfigError):
        config_from_dict({"resolution": 64})
    with pytest.raises(ConfigError):
        config_from_dict(["line_zeros"])
    with pytest.raises(ConfigError):
        config_from_dict({"scenario": "flat", "extra": 1})


def test_jobs_do_not_change_the_report(capsys):
    base = ["run", "--scenario", "line_zeros", "--k", "1", "--resolution", "64", "--json"]
    _, a, _ = run(capsys, *base)
    _, b, _ = run(capsys, *base, "--jobs", "3")
    da, db = json.loads(a), json.loads(b)
    for d in (da, db):
        d.pop("runtime")
        d["report"].pop("runtime")
        d["config"].pop("jobs")
    assert da == db


def test_convergence_csv_for_a_single_zero(capsys, tmp_path):
    path = tmp_path / "conv.csv"
    code, out, _ = run(capsys, "convergence", "--scenario", "line_zeros", "--k", "1", "--levels", "3",
                       "--out", str(path))
    assert code == 0
    assert out == path.read_text()
    rows = list(csv.reader(io.StringIO(out)))
    assert tuple(rows[0]) == CSV_HEADER
    assert rows[0] == "level,resolution,balance_error,identity_residual,ratio".split(",")
    body = [[float(v) for v in r] for r in rows[1:]]
    assert [int(r[1]) for r in body] == [65, 129, 257]
    bal = [r[2] for r in body]
    assert bal[0] > bal[1] > bal[2]
    assert all(r[4] >= 3 for r in body[1:])


def test_convergence_of_flat_scenario_sits_at_roundoff(capsys):
    code, out, _ = run(capsys, "convergence", "--scenario", "flat", "--levels", "2", "--resolution", "17", "--json")
    assert code == 0
    doc = json.loads(out)
    assert doc["schema_version"] == SCHEMA_VERSION
    assert all(r["identity_residual"] <= 1e-10 and r["balance_error"] <= 1e-10 for r in doc["rows"])


def test_convergence_pass_rule():
    nan = float("nan")
    good = [ConvergenceRow(0, 65, 1e-3, 1.0, nan), ConvergenceRow(1, 129, 2.5e-4, 0.25, 4.0)]
    assert convergence_passes(good)
    slow = [ConvergenceRow(0, 65, 1e-3, 1.0, nan), ConvergenceRow(1, 129, 2.5e-4, 0.5, 2.0)]
    assert not convergence_passes(slow)
    rising = [ConvergenceRow(0, 65, 1e-3, 1.0, nan), ConvergenceRow(1, 129, 2e-3, 0.25, 4.0)]
    assert not convergence_passes(rising)
    floor = [ConvergenceRow(0, 17, 0.0, 1e-14, nan), ConvergenceRow(1, 33, 0.0, 3e-14, 0.3)]
    assert convergence_passes(floor)


def test_list_json_cites_oracles(capsys):
    code, out, _ = run(capsys, "list", "--json")
    assert code == 0
    rows = json.loads(out)
    assert any(r["id"] == "riemann_hurwitz" for r in rows)
    assert all("[DERIVED" in r["expect"] or "[TRIVIAL" in r["expect"] for r in rows)
    code, text, _ = run(capsys, "list")
    assert code == 0 and "riemann_hurwitz" in text


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "chernweil", "list", "--json"], capture_output=True, text=True,
                          timeout=120)
    assert proc.returncode == 0
    assert "riemann_hurwitz" in proc.stdout
