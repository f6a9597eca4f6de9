import json
import subprocess
import sys

import pytest

from magsing.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


def _run(tmp_path, *args):
    out = tmp_path / "run"
    code = main([*args, "--out", str(out)])
    return code, out


def test_solve_pendulum(tmp_path):
    code, out = _run(tmp_path, "solve", "--preset", "pendulum", "--grid", "512", "--plots")
    assert code == EXIT_OK
    names = {p.name for p in out.iterdir()}
    assert {"u.csv", "u.json", "singular.csv", "summary.json", "manifest.json", "solution.png"} <= names
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pass"] and summary["residual_l2"] <= summary["residual_tol"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "solve" and man["grid"]["n"] == 512
    assert set(man["thresholds"]) == {"delta_sing", "theta_c", "eps_f"}
    assert len(man["config_hash"]) == 64 and "u.csv" in man["files"]


def test_solve_is_deterministic(tmp_path):
    a = main(["solve", "--preset", "magnetic-1d", "--grid", "128", "--out", str(tmp_path / "a")])
    b = main(["solve", "--preset", "magnetic-1d", "--grid", "128", "--out", str(tmp_path / "b")])
    assert a == b == EXIT_OK
    for name in ("u.csv", "singular.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_oracle_compare(tmp_path):
    code, out = _run(tmp_path, "oracle-compare", "--preset", "magnetic-1d", "--grid", "128")
    assert code == EXIT_OK
    rep = json.loads((out / "oracle.json").read_text())
    assert rep["pass"] and rep["c"] == pytest.approx(rep["c_exact"], abs=0.02)
    assert rep["domination"]["violations"] == 0


def test_flow_torus(tmp_path):
    code, out = _run(tmp_path, "flow", "--preset", "torus-distance", "--grid", "64", "--plots")
    assert code == EXIT_OK
    ver = json.loads((out / "verdicts.json").read_text())
    assert ver["pass"] and ver["starts"][0]["verdict"] == "Pass"
    header = (out / "trajectory_000.csv").read_text().splitlines()[0]
    assert header.startswith("t,x,y,indicator")
    assert (out / "indicator.png").exists()


def test_flow_without_starts_is_usage_error(tmp_path):
    code, out = _run(tmp_path, "flow", "--preset", "magnetic-1d", "--grid", "64")
    assert code == EXIT_USAGE
    assert json.loads((out / "error.json").read_text())["exit_code"] == EXIT_USAGE


def test_mollify_study_skips_under_resolved(tmp_path):
    code, out = _run(tmp_path, "mollify-study", "--preset", "torus-distance", "--grid", "128")
    assert code == EXIT_OK
    study = json.loads((out / "study.json").read_text())
    assert [r["m"] for r in study["rungs"]] == [16, 32, 64]
    assert "128" in {str(k) for k in study["skipped"]}
    assert (out / "psi_m064.csv").exists()


def test_critical_value(tmp_path):
    code, out = _run(tmp_path, "critical-value", "--preset", "magnetic-1d", "--grid", "128")
    assert code == EXIT_OK
    rep = json.loads((out / "critical_value.json").read_text())
    assert rep["c"] == pytest.approx(0.5, abs=0.02)


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("system:\n  name: pendulum\n  bogus: 1\n")
    code, out = _run(tmp_path, "solve", "--config", str(cfg))
    assert code == EXIT_USAGE
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config" and "bogus" in err["message"]


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("system: {name: pendulum, dim: 1, n: 64, omega: [0.0], potential: {id: pendulum}}\n"
                   "solver: {critical_value: -5.0}\n")
    code, out = _run(tmp_path, "solve", "--config", str(cfg))
    assert code == EXIT_NUMERIC
    assert json.loads((out / "error.json").read_text())["type"] == "SolverError"


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "magsing.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("solve", "flow", "mollify-study", "oracle-compare", "critical-value"):
        assert name in res.stdout
