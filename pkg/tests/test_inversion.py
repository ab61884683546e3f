import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jmgtlab.errors import (DomainError, InjectivityError, OutsideLocalBallError,
                            UnsupportedConfigurationError)
from jmgtlab.inversion import (Experiment, ObservationOp, ResidueImage, build_Blambda, forward_residues,
                               image_norm, interpolation_row, linearized_apply, lower_bound, newton_kappa,
                               reconstruct)
from jmgtlab.model import CoefficientField, Cutoff, SpatialProfile, TimeProfile, build_excitation
from jmgtlab.spectral import Grid, build_basis


@pytest.fixture(scope="module")
def exp8(basis16, background, chi, excitation, grid1d):
    phi, psi, r = excitation
    op = ObservationOp.points(grid1d, [[np.pi * (np.sqrt(5) - 1) / 2]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return {v: Experiment(basis16, background, chi, phi, psi, r, op, M=8, variant=v)
                for v in ("sound-speed", "attenuation")}


@given(st.floats(0.3, 2.8), st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_point_interpolation_is_exact_for_cubics(grid1d, x, c):
    nodes = grid1d.coordinates()[:, 0]
    p = lambda s: c[0] + c[1] * s + c[2] * s**2 + c[3] * s**3
    row = interpolation_row(grid1d, [x])
    assert row @ p(nodes) == pytest.approx(p(x), abs=1e-10)


def test_interpolation_uses_zero_boundary_values(grid1d):
    nodes = grid1d.coordinates()[:, 0]
    f = np.sin(nodes)
    for x in (0.0, 0.01, np.pi - 0.02):
        assert interpolation_row(grid1d, [x]) @ f == pytest.approx(np.sin(x), abs=1e-6)
    with pytest.raises(DomainError):
        interpolation_row(grid1d, [3.5])


def test_average_observation_is_quadrature(grid1d):
    op = ObservationOp.averages(grid1d, [lambda x: np.ones_like(x)])
    nodes = grid1d.coordinates()[:, 0]
    assert op.apply(np.sin(nodes))[0] == pytest.approx(2.0, rel=1e-3)


def test_interior_curve_2d_separates_double_eigenvalues():
    g = Grid((np.pi, np.pi), (16, 16))
    B = build_basis(g, 1.0, 1.0, 6)
    op = ObservationOp.interior_curve(g, offset=0.15)
    assert op.n_obs == 32
    maps = build_Blambda(op, B)
    assert [len(m.modes) for m in maps][:2] == [1, 2]
    # a single sensor cannot separate a two-dimensional eigenspace
    with pytest.raises(InjectivityError) as info:
        build_Blambda(ObservationOp.points(g, [[1.0, 0.7]]), B)
    assert [gi for gi, _ in info.value.failed] == [gi for gi, grp in enumerate(B.groups) if len(grp) > 1]


def test_sensor_at_midpoint_misses_even_modes(basis16, grid1d):
    op = ObservationOp.points(grid1d, [[np.pi / 2]])
    with pytest.raises(InjectivityError) as info:
        build_Blambda(op, basis16, 6)
    assert [gi for gi, _ in info.value.failed] == [1, 3, 5]
    maps = build_Blambda(op, basis16, 6, raise_errors=False)
    assert len(maps) == 6


@pytest.mark.parametrize("variant", ["sound-speed", "attenuation"])
def test_direction_coordinates_round_trip(exp8, variant):
    exp = exp8[variant]
    rng = np.random.default_rng(0)
    K, C = rng.standard_normal((2, exp.modes().size))
    K2, C2 = exp.coordinates(exp.direction(K, C))
    np.testing.assert_allclose(K2, K, atol=1e-10)
    np.testing.assert_allclose(C2, C, atol=1e-10)


@pytest.mark.parametrize("variant", ["sound-speed", "attenuation"])
def test_reconstruct_inverts_linearized_apply(exp8, variant, grid1d):
    exp = exp8[variant]
    rng = np.random.default_rng(1)
    K, C = rng.standard_normal((2, exp.modes().size))
    rec = reconstruct(linearized_apply(exp, K=K, C=C), exp)
    np.testing.assert_allclose(np.r_[rec.K, rec.C], np.r_[K, C], rtol=1e-10, atol=1e-12)
    assert np.all(np.isnan(rec.dkappa[~rec.mask])) and np.all(np.isfinite(rec.dkappa[rec.mask]))
    d = exp.direction(K, C)
    np.testing.assert_allclose(rec.dkappa[rec.mask], d.dkappa[rec.mask], rtol=1e-9)
    assert rec.imag_residual < 1e-10


@given(st.integers(0, 10_000))
def test_lower_bound_holds(exp8, seed):
    exp = exp8["sound-speed"]
    rng = np.random.default_rng(seed)
    K, C = rng.standard_normal((2, exp.modes().size)) * np.logspace(0, -3, exp.modes().size)
    assert image_norm(linearized_apply(exp, K=K, C=C)) ** 2 >= lower_bound(exp, K, C)


def test_jointly_linearized_image_is_additive(exp8):
    exp = exp8["attenuation"]
    n = exp.modes().size
    a = linearized_apply(exp, K=np.ones(n))
    b = linearized_apply(exp, C=np.ones(n))
    ab = linearized_apply(exp, K=np.ones(n), C=np.ones(n))
    assert image_norm(ab - (a + b)) == 0.0
    assert image_norm(a.scaled(2.0)) == pytest.approx(2 * image_norm(a))


def test_experiment_validation(basis16, background, chi, excitation, grid1d):
    phi, psi, r = excitation
    op = ObservationOp.points(grid1d, [[1.0]])
    with pytest.raises(DomainError):
        Experiment(basis16, background, chi, phi, psi, r, op, M=40)
    with pytest.raises(DomainError):
        Experiment(basis16, background, chi, phi, psi, r, op, M=2, variant="density")
    varb = background.perturbed(db0=grid1d.evaluate(lambda x: 0.1 * x))
    with pytest.raises(UnsupportedConfigurationError):
        Experiment(basis16, varb, chi, phi, psi, r, op, M=2)
    # strong damping makes the lowest modes overdamped
    heavy = CoefficientField.on_grid(grid1d, tau=0.1, b0=3.0)
    with pytest.raises(DomainError, match="overdamped"):
        Experiment(basis16, heavy, chi, phi, psi, build_excitation(phi, psi, heavy, basis16), op, M=2)


def test_reconstruct_argument_checks(exp8):
    exp = exp8["sound-speed"]
    img = linearized_apply(exp, K=np.ones(exp.modes().size))
    with pytest.raises(DomainError):
        reconstruct(img, exp, variant="attenuation")
    with pytest.raises(DomainError):
        reconstruct(img, exp, M=9)


def test_reconstruction_files(exp8, grid1d, tmp_path):
    exp = exp8["sound-speed"]
    rec = reconstruct(linearized_apply(exp, K=np.ones(exp.modes().size)), exp)
    rec.save(tmp_path, grid1d)
    head = (tmp_path / "reconstruction.csv").read_text().splitlines()[:2]
    assert head[0] == "x0,dkappa,dc0_sq"
    diag = json.loads((tmp_path / "reconstruction.json").read_text())
    assert set(diag) >= {"c_nu", "amplification", "B_condition", "nu"}


def test_frozen_newton_on_mildly_nonlinear_map(exp8):
    exp = exp8["sound-speed"]
    n = exp.basis.modes_up_to_group(4).size
    pad = lambda x: np.r_[x, np.zeros(exp.modes().size - n)]
    F = lambda x: linearized_apply(exp, K=pad(x + 0.3 * x**2))
    x_true = 1e-2 * np.array([1.0, -0.6, 0.4, 0.3])
    res = newton_kappa(F(x_true), exp, M=4, iterations=10, forward=F)
    assert res.converged and res.iterations <= 10
    np.testing.assert_allclose(res.x, x_true, rtol=1e-8)
    assert all(b < a for a, b in zip(res.residuals, res.residuals[1:]))


def test_frozen_newton_reports_divergence(exp8):
    exp = exp8["sound-speed"]
    n = exp.basis.modes_up_to_group(4).size
    pad = lambda x: np.r_[x, np.zeros(exp.modes().size - n)]
    F = lambda x: linearized_apply(exp, K=pad(3.0 * x))
    with pytest.raises(OutsideLocalBallError) as info:
        newton_kappa(F(np.full(n, 1e-2)), exp, M=4, iterations=10, forward=F)
    assert len(info.value.history) >= 3


def test_forward_map_is_tangent_to_linearization():
    """Difference quotient of the simulated forward map approaches linearized_apply."""
    g = Grid((np.pi,), (32,))
    B = build_basis(g, 1.0, 1.0, 8)
    co = CoefficientField.on_grid(g, tau=0.1, b0=1.0)
    chi = Cutoff(1e-3, 5e-3)
    phi = SpatialProfile.from_modes(B, [1.0])
    psi = TimeProfile(4, 2.0, 1.0)
    r = build_excitation(phi, psi, co, B)
    op = ObservationOp.points(g, [[np.pi * (np.sqrt(5) - 1) / 2]])
    exp = Experiment(B, co, chi, phi, psi, r, op, M=3, shift_terms=False)
    K = 1e-3 * np.array([1.0, 0.5, -0.4])
    y = forward_residues(exp.coeff_for(exp.direction(K)), chi, exp)
    y0 = forward_residues(co, chi, exp)
    lin = linearized_apply(exp, K=K)
    assert image_norm((y - y0) - lin) <= 5e-3 * image_norm(lin)
