import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy.integrate import quad

from jmgtlab.errors import DomainError, DoublePoleError, EstimationError
from jmgtlab.residues import (basis_poles, duhamel, estimate_poles, omega, poles, resolvent_residue,
                              residue_from_trace, source_laplace_tail, u_to_z_residues)
from jmgtlab.solver import Solver


@given(st.floats(1e-2, 1e2), st.floats(0.0, 5.0), st.floats(0.2, 5.0))
def test_poles_are_roots_and_residue_is_reciprocal_derivative(lam, b, c):
    disc = 4 * c * c * lam - b * b
    assume(abs(disc) > 1e-6 * max(4 * c * c * lam, b * b))
    pp = poles(lam, b, c)
    scale = max(c * c * lam, b * b)
    for p in (pp.p_plus, pp.p_minus):
        assert abs(omega(lam, b, c, p)) <= 1e-12 * scale
    R = resolvent_residue(pp)
    assert R == pytest.approx(1 / (2 * pp.p_plus + b), rel=1e-12)
    assert pp.oscillatory == (disc > 0)
    if not pp.oscillatory:
        # p+ is the slower real root and its residue is positive
        assert pp.p_plus.real > pp.p_minus.real and R.real > 0


def test_overdamped_roots_are_accurate_without_cancellation():
    pp = poles(1e-6, 10.0, 1.0)
    assert pp.p_plus.real == pytest.approx(-1e-7, rel=1e-9)


def test_critical_damping_raises():
    with pytest.raises(DoublePoleError):
        poles(1.0, 2.0, 1.0)
    with pytest.raises(DomainError):
        poles(-1.0, 1.0, 1.0)


def test_basis_poles_per_group(basis16):
    assert len(basis_poles(basis16, 1.0)) == 16
    assert len(basis_poles(basis16, 1.0, per_mode=False)) == len(basis16.groups)


def synthetic(t, pairs, coef, extra=()):
    g = np.zeros_like(t, dtype=complex)
    for p, (a, b) in zip(pairs, coef):
        g += a * np.exp(p.p_plus * t) + b * np.exp(p.p_minus * t)
    for q, a in extra:
        g += a * np.exp(q * t)
    return g.real


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.5, 3.0))
def test_fit_recovers_conjugate_residues(re, im, lam):
    pair = poles(lam, 1.0, 1.0)
    assume(pair.oscillatory)
    R = complex(re, im)
    t = np.linspace(3.0, 15.0, 1201)
    g = synthetic(t, [pair], [(R, np.conj(R))], extra=[(-10.0, 0.3)])
    res = residue_from_trace(t, g, pair, extra_poles=[-10.0])
    assert abs(res.r_plus - R) < 1e-9 and abs(res.r_minus - np.conj(R)) < 1e-9
    assert res.residual < 1e-10


def test_fit_with_extra_terms_and_shift_terms():
    pairs = [poles(l, 1.0, 1.0) for l in (1.0, 4.0)]
    t = np.linspace(5.0, 21.0, 1601)
    s = t - t[0]
    g = synthetic(t, pairs, [(0.2 + 0.1j, 0.2 - 0.1j), (-0.05j, 0.05j)])
    g += (0.4 + 0.3 * s**2) * np.exp(-2 * s)
    res = residue_from_trace(t, g, pairs, extra_terms=[(-2.0, k) for k in range(3)], shift_terms=True)
    np.testing.assert_allclose(res.r_plus, [0.2 + 0.1j, -0.05j], atol=1e-8)


def test_limit_method_agrees_with_fit():
    pair = poles(2.0, 0.6, 1.0)
    t = np.linspace(0.0, 30.0, 30001)
    g = synthetic(t, [pair], [(0.3 - 0.2j, 0.3 + 0.2j)])
    lim = residue_from_trace(t, g, pair, method="limit")
    # averaging over a sampled half period is accurate to O(dt)
    assert abs(lim.r_plus - (0.3 - 0.2j)) < 1e-4
    with pytest.raises(DomainError):
        residue_from_trace(t, g, pair, method="nope")


def test_mismatched_poles_warn():
    pair = poles(2.0, 1.0, 1.0)
    t = np.linspace(0, 10, 501)
    g = np.exp(-0.2 * t) * np.cos(3.3 * t)
    with pytest.warns(RuntimeWarning, match="residual"):
        residue_from_trace(t, g, pair)


def test_u_to_z_round_trip_and_singularity():
    R = np.array([0.3 + 0.1j, -0.2j])
    p = np.array([-0.5 + 1j, -0.5 + 2j])
    back = u_to_z_residues(u_to_z_residues(R, p, 0.1), p, 0.1, inverse=True)
    np.testing.assert_allclose(back, R, rtol=1e-15)
    with pytest.raises(EstimationError):
        u_to_z_residues(R, np.array([-10.0, -1.0]), 0.1)


def test_u_trace_residues_convert_to_z_trace_residues(basis16, background, chi):
    """Residues of O u and O z = O(tau u_t + u) differ exactly by (tau p + 1)."""
    B, co = basis16, background
    x0 = (np.r_[0.8, -0.3, np.zeros(14)], np.r_[0.1, 0.2, np.zeros(14)], np.r_[0.5, np.zeros(15)])
    tr = Solver(B, co, chi, dt=1e-3).simulate(x0, 14.0, sample_every=10, detect=False)
    pairs = [poles(l, 1.0, 1.0) for l in B.eigenvalues[:2]]
    sel = tr.times >= 2.0
    t = tr.times[sel]
    fu = residue_from_trace(t, tr.U[sel, :2], pairs, extra_poles=[-1 / co.tau])
    fz = residue_from_trace(t, tr.Z[sel, :2], pairs)
    pp = np.array([p.p_plus for p in pairs])
    got = u_to_z_residues(np.diagonal(fu.r_plus), pp, co.tau)
    np.testing.assert_allclose(got, np.diagonal(fz.r_plus), atol=1e-9)


def test_matrix_pencil_recovers_poles():
    t = np.linspace(0, 10, 1001)
    p1, p2 = -0.3 + 2j, -0.7 + 5j
    g = (np.exp(p1 * t) + 0.5 * np.exp(p2 * t)).real
    est = estimate_poles(t, g, 4)
    got = sorted([p for p in est if p.imag > 0], key=lambda p: p.imag)
    np.testing.assert_allclose(got, [p1, p2], atol=1e-8)
    with pytest.raises(DomainError):
        estimate_poles(np.r_[0, 1, 3.0, 4, 5, 6, 7, 8, 9], np.ones(9), 1)


def test_duhamel_matches_direct_integration(basis16, background, chi, excitation):
    _, _, r = excitation
    B, co = basis16, background
    T0 = 1.0
    pl = basis_poles(B, 1.0)
    z = np.zeros(16)
    tr = Solver(B, co, chi, r, dt=1e-3).simulate((z, z, z), 1.0, detect=False)
    # from the state at T0 the tail is homogeneous response plus the Duhamel integral
    s = Solver(B, co, chi, r, dt=1e-3)
    forced = s.simulate((z, z, z), 3.0, t0=T0, sample_every=100, detect=False)
    zp, ztp, up = duhamel(r, B, pl, co.tau, T0, forced.times)
    np.testing.assert_allclose(up, forced.U, atol=1e-10)
    np.testing.assert_allclose(zp, forced.Z, atol=1e-10)


def test_source_laplace_tail_against_quadrature(basis16, excitation):
    _, _, r = excitation
    pl = basis_poles(basis16, 1.0)[:1]
    got = source_laplace_tail(r, basis16, pl, 2.0)
    p = pl[0].p_plus
    f = lambda s: np.exp(-p * s) * r.modal(s)[0]
    ref = quad(lambda s: f(s).real, 2.0, 60, limit=400)[0] + 1j * quad(lambda s: f(s).imag, 2.0, 60, limit=400)[0]
    assert abs(got[0, 0] - ref) < 1e-10
