import json

import numpy as np
import pytest

from jmgtlab.errors import DegeneracyError, ValidationError
from jmgtlab.pipeline import BUNDLED, build, load_config, run


def test_bundled_configs_validate():
    for name in BUNDLED:
        st = build(name)
        assert st.config["name"] == name


def test_unknown_config_name():
    with pytest.raises(ValidationError, match="bundled"):
        load_config("no-such-config")


def test_cli_overrides():
    cfg = load_config("linear-oscillator", seed=7, modes=5)
    assert cfg["seed"] == 7 and cfg["n_modes"] == 5


def test_linear_oscillator_report(tmp_path):
    rep = run("linear-oscillator", out=tmp_path, stages=("simulate", "extract"))
    assert rep.extract["rel_error"] <= 1e-6
    assert rep.simulate["decay_rate"] == pytest.approx(1.0, rel=1e-2)
    for name in ("trajectory.csv", "residues.json", "residues.csv", "report.json"):
        assert (tmp_path / name).exists()
    data = json.loads((tmp_path / "report.json").read_text())
    assert set(data["criteria"]) == {f"C{i}" for i in range(1, 11)}


def test_separable_residues_vanish():
    rep = run("separable", stages=("simulate", "extract"))
    assert rep.extract["max_abs_residue"] <= 1e-8 and rep.extract["max_abs_fitted"] <= 1e-8


def test_outputs_are_bitwise_deterministic(tmp_path):
    cfg = dict(BUNDLED["linear-oscillator"], initial={"random_amplitude": 0.3}, seed=11,
               time={"T": 4.0})
    for sub in ("a", "b"):
        run(cfg, out=tmp_path / sub, stages=("simulate",))
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    b = (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert a == b
    run(dict(cfg, seed=12), out=tmp_path / "c", stages=("simulate",))
    assert (tmp_path / "c" / "trajectory.csv").read_bytes() != a


def test_csv_uses_17_significant_digits(tmp_path):
    run(dict(BUNDLED["linear-oscillator"], time={"T": 1.0}), out=tmp_path, stages=("simulate",))
    row = (tmp_path / "trajectory.csv").read_text().splitlines()[2].split(",")
    vals = [float(v) for v in row]
    assert len(row[1].replace(".", "").replace("-", "").lstrip("0").split("e")[0]) == 17
    assert vals[0] == pytest.approx(0.01)


def test_numerical_failures_surface():
    cfg = {"coefficients": {"kappa": 5.0}, "time": {"T": 3.0}}
    with pytest.raises(DegeneracyError):
        run(cfg, stages=("simulate",))


def test_invert_stage_reports_errors(tmp_path):
    rep = run("inversion-b0", out=tmp_path, stages=("invert",))
    assert rep.invert["rel_error"] <= 1e-2
    assert (tmp_path / "reconstruction.csv").exists()
    assert (tmp_path / "invert.json").exists()
