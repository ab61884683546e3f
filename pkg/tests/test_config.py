import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jmgtlab.config import DEFAULTS, ExperimentConfig, Expression, evaluate_field
from jmgtlab.errors import ValidationError
from jmgtlab.spectral import Grid


def test_defaults_validate_and_round_trip(tmp_path):
    cfg = ExperimentConfig.from_dict({})
    assert cfg.to_dict() == DEFAULTS
    cfg.save(tmp_path / "c.json")
    again = ExperimentConfig.load(tmp_path / "c.json")
    assert again == cfg
    assert ExperimentConfig.from_dict(json.loads(again.dumps())) == cfg


@given(st.floats(1e-5, 1e-2), st.floats(1.5, 10), st.integers(1, 32), st.integers(0, 2**31),
       st.sampled_from(["kappa-only", "kappa-c0", "kappa-b0"]), st.integers(1, 8))
def test_parse_serialize_parse_is_identity(m_lo, ratio, n_modes, seed, variant, M):
    d = {"cutoff": {"m_lo": m_lo, "m_hi": m_lo * ratio}, "n_modes": n_modes, "seed": seed,
         "inversion": {"variant": variant, "M": M}, "coefficients": {"kappa": "0.1*sin(x)"}}
    cfg = ExperimentConfig.from_dict(d)
    assert ExperimentConfig.from_dict(json.loads(cfg.dumps())) == cfg


@pytest.mark.parametrize("patch,field", [
    ({"cutoff": {"m_lo": 5e-3, "m_hi": 1e-3}}, "cutoff.m_lo"),
    ({"cutof": {}}, "cutof"),
    ({"coefficients": {"kapa": 1.0}}, "coefficients.kapa"),
    ({"inversion": {"variant": "kappa-rho"}}, "inversion.variant"),
    ({"time": {"dt": -1.0}}, "time.dt"),
    ({"n_modes": 0}, "n_modes"),
    ({"grid": {"points": [4]}}, "grid.points"),
    ({"excitation": {"psi": {"q": 2}}}, "excitation.psi.q"),
    ({"excitation": {"rec_box": [0.7, 0.2]}}, "excitation.rec_box"),
    ({"coefficients": {"kappa": "sin(x"}}, "coefficients.kappa"),
    ({"observation": {"kind": "averages"}}, "observation.weights"),
    ({"inversion": {"direction": {"dtau": "1"}}}, "inversion.direction"),
])
def test_validation_names_the_field(patch, field):
    with pytest.raises(ValidationError) as info:
        ExperimentConfig.from_dict(patch)
    assert info.value.field == field
    assert field in str(info.value)


def test_invalid_json_is_a_validation_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError):
        ExperimentConfig.load(p)


def test_overrides_revalidate():
    cfg = ExperimentConfig.from_dict({})
    assert cfg.with_overrides(**{"inversion.M": 6})["inversion"]["M"] == 6
    with pytest.raises(ValidationError):
        cfg.with_overrides(**{"inversion.M": 0})


@pytest.mark.parametrize("text,x,value", [
    ("1 + 0.5*cos(x)", 0.0, 1.5), ("-x**2 + pi", 1.0, np.pi - 1), ("exp(-x)/2", 0.0, 0.5),
    ("sqrt(4) * tanh(0)", 0.3, 0.0), ("e", 0.0, np.e),
])
def test_expressions_evaluate(text, x, value):
    assert Expression(text)(x) == pytest.approx(value)


@pytest.mark.parametrize("text", ["__import__('os')", "x.real", "open('f')", "[1, 2]", "lambda: 1",
                                  "sin(x, x)", "z + 1", "'a'"])
def test_expressions_reject_unsafe_syntax(text):
    with pytest.raises(ValidationError):
        Expression(text, field="coefficients.kappa")


def test_fields_accept_numbers_lists_and_expressions():
    g = Grid((np.pi,), (16,))
    assert np.all(evaluate_field(2.0, g, "f") == 2.0)
    np.testing.assert_allclose(evaluate_field("sin(x)", g, "f"), np.sin(g.coordinates()[:, 0]))
    assert evaluate_field(list(range(16)), g, "f")[3] == 3
    with pytest.raises(ValidationError) as info:
        evaluate_field([1.0, 2.0], g, "coefficients.b0")
    assert info.value.field == "coefficients.b0"


def test_two_dimensional_expression():
    g = Grid((1.0, 2.0), (8, 8))
    v = evaluate_field("x * y", g, "f")
    xy = g.coordinates()
    np.testing.assert_allclose(v, xy[:, 0] * xy[:, 1])
