import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from jmgtlab.errors import DomainError, UnsupportedConfigurationError
from jmgtlab.model import (CoefficientField, Cutoff, SpatialProfile, TimeProfile, build_excitation,
                           cutoff_eval, f_weights, gauss_laplace, nu_factors)
from jmgtlab.residues import poles


@given(st.floats(1e-4, 1.0), st.floats(1.01, 10.0), st.floats(0, 20.0))
def test_cutoff_range_and_plateaus(m_lo, ratio, s):
    chi = Cutoff(m_lo, m_lo * ratio)
    v = chi.value(s * m_lo)
    assert 0.0 <= v <= 1.0
    if s * m_lo <= m_lo:
        assert v == 0.0
    if s * m_lo >= chi.m_hi:
        assert v == 1.0


def test_cutoff_monotone_and_derivatives_match_differences():
    chi = Cutoff(1e-3, 5e-3)
    s = np.linspace(0, 6e-3, 2001)
    v = chi.value(s)
    assert np.all(np.diff(v) >= 0)
    h = 1e-8
    inner = s[(s > chi.m_lo + 1e-6) & (s < chi.m_hi - 1e-6)]
    fd1 = (chi.value(inner + h) - chi.value(inner - h)) / (2 * h)
    np.testing.assert_allclose(chi.d1(inner), fd1, rtol=1e-5, atol=1e-3)
    fd2 = (chi.d1(inner + h) - chi.d1(inner - h)) / (2 * h)
    np.testing.assert_allclose(chi.d2(inner), fd2, rtol=1e-4, atol=1.0)
    # C^2 at the junctions
    for x in (chi.m_lo, chi.m_hi):
        assert chi.d1(x) == pytest.approx(0, abs=1e-12) and chi.d2(x) == pytest.approx(0, abs=1e-9)


def test_cutoff_validation():
    with pytest.raises(DomainError):
        Cutoff(5e-3, 1e-3)
    with pytest.raises(DomainError):
        cutoff_eval(Cutoff(1e-3, 2e-3), -1.0)


@given(st.integers(3, 7), st.floats(0.5, 4.0), st.integers(0, 3))
def test_time_profile_derivatives_against_finite_differences(q, a, k):
    psi = TimeProfile(q, a, 1.3)
    t = np.linspace(0.2, 6, 17)
    h = 1e-5
    fd = (psi.derivative(t + h, k) - psi.derivative(t - h, k)) / (2 * h)
    np.testing.assert_allclose(psi.derivative(t, k + 1), fd, rtol=1e-6, atol=1e-7)


def test_time_profile_vanishes_to_third_order_at_zero():
    psi = TimeProfile(3, 2.0, 1.0)
    assert [psi.derivative(0.0, k) for k in range(3)] == [0.0, 0.0, 0.0]
    with pytest.raises(DomainError):
        TimeProfile(2, 1.0)


@pytest.mark.parametrize("z", [0.3, 1.0 + 2.0j, -0.5 + 0.8j])
def test_time_profile_laplace_against_quadrature(z):
    psi = TimeProfile(4, 2.0, 0.7)
    re = quad(lambda t: (np.exp(-z * t) * psi(t)).real, 0, 80, limit=200)[0]
    im = quad(lambda t: (np.exp(-z * t) * psi(t)).imag, 0, 80, limit=200)[0]
    assert abs(psi.laplace(z) - (re + 1j * im)) < 1e-10


def test_gauss_laplace_against_quadrature():
    f = lambda t: np.sin(3 * t) * np.exp(-t)
    z = np.array([0.2 + 1j, -0.4 + 2j])
    got = gauss_laplace(f, [0.5, 1.7, 4.0], z)
    for zi, g in zip(z, got):
        ref = quad(lambda t: (np.exp(-zi * t) * f(t)).real, 0.5, 4.0, epsabs=1e-14)[0] + \
            1j * quad(lambda t: (np.exp(-zi * t) * f(t)).imag, 0.5, 4.0, epsabs=1e-14)[0]
        assert abs(g - ref) < 1e-12


def test_coefficient_field_validation(grid1d):
    with pytest.raises(DomainError):
        CoefficientField.on_grid(grid1d, c0_sq=-1.0)
    with pytest.raises(DomainError):
        CoefficientField.on_grid(grid1d, b0=-0.1)
    with pytest.raises(DomainError):
        CoefficientField.on_grid(grid1d, tau=0.0)
    co = CoefficientField.on_grid(grid1d, b0=lambda x: 1 + 0.1 * x)
    assert not co.constant_b0
    with pytest.raises(UnsupportedConfigurationError):
        co.b_bar


def test_spatial_profile_requires_nonvanishing_region(basis16):
    # phi_2 vanishes at the centre, which is a node of this odd grid
    from jmgtlab.spectral import Grid, build_basis
    B = build_basis(Grid((np.pi,), (63,)), 1.0, 1.0, 4)
    with pytest.raises(DomainError):
        SpatialProfile.from_modes(B, [0.0, 1.0], rec_box=(0.3, 0.7))
    phi = SpatialProfile.from_modes(basis16, [1.0])
    assert phi.min_phi > 0 and phi.min_lap > 0


def test_fitted_bump_is_close_to_constant(basis16):
    phi = SpatialProfile.fitted_bump(basis16, n_modes=5, level=1.0)
    vals = phi.values[phi.rec_mask]
    assert np.max(np.abs(vals - 1)) < 0.2


def test_separable_excitation_matches_grid_formula(basis16, background, excitation):
    phi, psi, r = excitation
    tau, t = background.tau, 1.3
    # r = phi psi_tau'' + c^2 A phi psi_tau + b phi psi_tau'
    ref = (phi.values * psi.relaxed(t, tau, 2) + basis16.apply_A(phi.values) * psi.relaxed(t, tau)
           + phi.values * psi.relaxed(t, tau, 1))
    np.testing.assert_allclose(r.grid(t, basis16), ref, atol=1e-10)
    np.testing.assert_allclose(r.modal_many(np.array([t]))[0], r.modal(t), rtol=1e-14)


def test_separable_excitation_needs_constant_b0(basis16, grid1d, excitation):
    phi, psi, _ = excitation
    co = CoefficientField.on_grid(grid1d, b0=lambda x: 1 + 0.1 * x)
    with pytest.raises(UnsupportedConfigurationError):
        build_excitation(phi, psi, co, basis16)


def test_f_weights_transforms_against_quadrature(basis16, chi, excitation):
    phi, psi, _ = excitation
    for variant in ("sound-speed", "attenuation"):
        fw = f_weights(psi, chi, phi, 0.1, variant, basis16)
        for z in (-0.5 + 0.9j, -0.5 - 2.1j):
            f1r = quad(lambda t: (np.exp(-z * t) * fw.f1(t)).real, 0, 60, limit=400)[0]
            f1i = quad(lambda t: (np.exp(-z * t) * fw.f1(t)).imag, 0, 60, limit=400)[0]
            assert abs(fw.f1_hat(z) - (f1r + 1j * f1i)) < 1e-8
            a, b = fw.breaks[0], fw.breaks[-1]
            f2r = quad(lambda t: (np.exp(-z * t) * fw.f2(t)).real, a, b, points=fw.breaks[1:-1], limit=400)[0]
            f2i = quad(lambda t: (np.exp(-z * t) * fw.f2(t)).imag, a, b, points=fw.breaks[1:-1], limit=400)[0]
            assert abs(fw.f2_hat(z) - (f2r + 1j * f2i)) < 1e-9 * max(1, abs(f2r + 1j * f2i))


def test_f2_exact_form_is_time_derivative(basis16, chi, excitation):
    phi, psi, _ = excitation
    fw = f_weights(psi, chi, phi, 0.1, "sound-speed", basis16, f2_form="exact")
    t = np.linspace(fw.breaks[0] + 1e-3, fw.breaks[-1] - 1e-3, 50)
    g = lambda s: fw.sigma(s) * 2 * psi(s) * psi.derivative(s, 1)
    h = 1e-6
    np.testing.assert_allclose(fw.f2(t), (g(t + h) - g(t - h)) / (2 * h), atol=1e-6)


def test_nu_factors_flag_degenerate_pairs():
    f1 = lambda z: np.ones_like(z)
    f2 = lambda z: np.ones_like(z)
    nu = nu_factors(f1, f2, [poles(1.0, 1.0, 1.0)])
    assert nu.flagged.all()
    nu = nu_factors(f1, lambda z: z, [poles(1.0, 1.0, 1.0)])
    pp = poles(1.0, 1.0, 1.0)
    assert nu.values[0] == pytest.approx(pp.p_plus - pp.p_minus)
    assert not nu.flagged.any()
