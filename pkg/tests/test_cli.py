import json
import subprocess
import sys

import pytest

from jmgtlab import checks
from jmgtlab.cli import main


def test_simulate_writes_outputs(tmp_path, capsys):
    code = main(["simulate", "--config", "linear-oscillator", "--out", str(tmp_path), "--modes", "4"])
    assert code == 0
    assert (tmp_path / "trajectory.csv").exists()
    summary = json.loads(capsys.readouterr().out)
    assert summary["t_star"] is not None


def test_quiet_prints_nothing(tmp_path, capsys):
    assert main(["simulate", "--config", "linear-oscillator", "--quiet", "--modes", "2"]) == 0
    assert capsys.readouterr().out == ""


def test_validation_errors_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"cutoff": {"m_lo": 1e-2, "m_hi": 1e-3}}))
    assert main(["simulate", "--config", str(p)]) == 2
    assert "cutoff.m_lo" in capsys.readouterr().err


def test_numerical_errors_exit_3(tmp_path, capsys):
    p = tmp_path / "blowup.json"
    p.write_text(json.dumps({"coefficients": {"kappa": 5.0}, "time": {"T": 3.0}}))
    assert main(["simulate", "--config", str(p)]) == 3
    assert "DegeneracyError" in capsys.readouterr().err


def test_verify_failure_exits_4(monkeypatch, capsys):
    @checks._timed("X1", "always fails")
    def bad():
        return False, 1.0, 0.0, ""
    monkeypatch.setitem(checks.SUITE_CHECKS, "spectral", [bad])
    assert main(["verify", "spectral"]) == 4
    assert "[FAIL] X1" in capsys.readouterr().out


def test_verify_spectral_passes(tmp_path):
    assert main(["verify", "spectral", "--out", str(tmp_path), "--quiet"]) == 0
    res = json.loads((tmp_path / "verify_spectral.json").read_text())
    assert all(r["passed"] for r in res)


def test_unknown_suite_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["verify", "everything"])
    assert info.value.code == 2


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "jmgtlab", "extract", "--config", "linear-oscillator",
                          "--out", str(tmp_path), "--quiet"], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "residues.json").exists()


def test_report_attaches_suite(tmp_path, capsys):
    code = main(["report", "--config", "linear-oscillator", "--out", str(tmp_path), "--suite", "spectral",
                 "--quiet"])
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["criteria"]["C1"]["status"] == "not run"
    assert rep["invariants"]["S1"]["status"] == "pass"
