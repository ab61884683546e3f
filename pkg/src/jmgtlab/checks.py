"""Acceptance criteria and module invariant suites.

Every check returns a CheckResult; ``verify(suite)`` runs a named group.
Reference values come from independent computations (matrix exponentials,
polynomial roots, analytic finite-difference spectra) rather than from the
code under test.
"""
from __future__ import annotations

import functools
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, InjectivityError
from .inversion import (ObservationOp, build_Blambda, forward_residues, image_norm, linearized_apply,
                        lower_bound, newton_kappa, reconstruct)
from .model import CoefficientField, Cutoff, SpatialProfile, build_excitation
from .pipeline import BUNDLED, build, extract_stage, run
from .residues import omega, poles, resolvent_residue
from .solver import Direction, Solver, linear_tail, loglog_slope, taylor_remainder_check
from .spectral import Grid, build_basis

SUITES = ("spectral", "solver", "residue", "inversion", "all")


@dataclass
class CheckResult:
    key: str
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] {self.key:<4} {self.name}: value={self.value:.3e} "
                f"tol={self.tolerance:.1e} ({self.seconds:.1f}s) {self.detail}").rstrip()

    def to_dict(self):
        d = asdict(self)
        d["passed"] = bool(d["passed"])
        return d


def _timed(key, name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kw):
            t = time.perf_counter()
            passed, value, tol, detail = fn(*args, **kw)
            return CheckResult(key, name, bool(passed), float(value), float(tol), detail,
                               time.perf_counter() - t)
        wrapper.key = key
        return wrapper
    return deco


# shared fixtures ------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def default_setup(variant="kappa-c0", M=4):
    """The reference 1-D experiment used by the inversion criteria."""
    return build({"inversion": {"variant": variant, "M": M}})


def _modal_ode_matrix(lam, tau, b, c):
    """First-order system for (u, u_t, u_tt) of one mode."""
    return np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
                     [-c * c * lam / tau, -(b + c * c * lam * tau) / tau, -(1 + b * tau) / tau]])


def _linear_run(n_modes, dt, T, x0, sample_every=1):
    g = Grid((np.pi,), (64,))
    B = build_basis(g, 1.0, 1.0, n_modes)
    co = CoefficientField.on_grid(g, tau=0.1, b0=1.0)
    s = Solver(B, co, Cutoff(1e-3, 5e-3), dt=dt)
    traj = s.simulate(x0, T, sample_every=sample_every, detect=False)
    return B, co, traj


def _reference_modal(B, co, x0, times):
    U = np.empty((times.size, B.n_modes))
    for j, lam in enumerate(B.eigenvalues):
        Amat = _modal_ode_matrix(lam, co.tau, co.b_bar, co.c)
        y0 = np.array([x0[0][j], x0[1][j], x0[2][j]])
        U[:, j] = [(expm(Amat * t) @ y0)[0] for t in times]
    return U


# criteria --------------------------------------------------------------------

@_timed("C1", "pole and residue formulas on 1000 random (lambda, b, c)")
def criterion_1(seed=0, n=1000):
    rng = np.random.default_rng(seed)
    worst_w, worst_r = 0.0, 0.0
    count = 0
    while count < n:
        lam = 10 ** rng.uniform(-2, 2)
        b = rng.uniform(0, 4)
        c = 10 ** rng.uniform(-0.7, 0.7)
        if abs(4 * c * c * lam - b * b) < 1e-6 * max(4 * c * c * lam, b * b):
            continue
        pp = poles(lam, b, c)
        scale = max(c * c * lam, b * b, 1e-300)
        for p in (pp.p_plus, pp.p_minus):
            worst_w = max(worst_w, abs(omega(lam, b, c, p)) / scale)
        # independent oracle: 1 / omega'(p+) with p+ from numpy's companion-matrix roots
        roots = np.roots([1.0, b, c * c * lam])
        p_ref = roots[np.argmin(np.abs(roots - pp.p_plus))]
        ref = 1.0 / (2 * p_ref + b)
        R = resolvent_residue(pp)
        worst_r = max(worst_r, abs(R - ref) / abs(ref), abs(R - 1.0 / (pp.p_plus - pp.p_minus)) / abs(ref))
        count += 1
    value = max(worst_w, worst_r)
    return value <= 1e-12, value, 1e-12, f"omega {worst_w:.1e}, residue {worst_r:.1e}"


@_timed("C2", "linear modal RK4 against the exact damped oscillator")
def criterion_2():
    n = 8
    x0 = (np.linspace(1.0, 0.2, n), np.linspace(-0.5, 0.1, n), np.linspace(0.3, -0.3, n))
    B, co, traj = _linear_run(n, 1e-3, 20.0, x0, sample_every=100)
    err = float(np.max(np.abs(traj.U - _reference_modal(B, co, x0, traj.times))))
    # order: one mode with steps large enough for truncation to dominate rounding
    x1 = (np.array([1.0]), np.array([-0.5]), np.array([0.3]))
    errs = []
    for dt in (0.04, 0.02, 0.01):
        B1, co1, tr = _linear_run(1, dt, 20.0, x1, sample_every=int(round(0.2 / dt)))
        errs.append(np.max(np.abs(tr.U - _reference_modal(B1, co1, x1, tr.times))))
    order = float(np.log2(errs[-2] / errs[-1]))
    ok = err <= 1e-6 and abs(order - 4) <= 0.3
    return ok, err, 1e-6, f"observed order {order:.2f} (expected 4 +- 0.3)"


@_timed("C3", "separable solution reproduced by the solver")
def criterion_3(T=10.0):
    st = default_setup()
    co = st.coeff
    s = Solver(st.basis, co, st.chi, st.source, dt=1e-3)
    traj = s.simulate(st.initial, T, sample_every=10, detect=False)
    exact = st.psi(traj.times)[:, None] * st.phi.modal[None, :]
    err = float(np.max(np.abs(traj.U - exact)) / np.max(np.abs(exact)))
    return err <= 1e-6, err, 1e-6, ""


@_timed("C4", "energy decay and exact linear tail after switch-off")
def criterion_4(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(2):
        n = 16
        x0 = tuple(rng.standard_normal(n) / (1 + np.arange(n)) for _ in range(3))
        _, co, traj = _linear_run(n, 1e-3, 20.0, x0, sample_every=10)
        ratio = np.max(np.exp(co.b_bar / 4 * traj.times) * traj.energy) / traj.energy[0]
        worst = max(worst, float(ratio))
    st = default_setup()
    g = st.grid
    kappa = g.evaluate(lambda x: 0.1 * np.sin(x) + 0.05 * np.cos(2 * x))
    co = st.coeff.perturbed(dkappa=kappa)
    s = Solver(st.basis, co, st.chi, st.source, dt=1e-3)
    traj = s.simulate(st.initial, 12.0, sample_every=10, detect=True, extend_to=40.0)
    if traj.t_star is None:
        return False, np.inf, 1e-6, "run did not switch off"
    tail = linear_tail(traj, co)
    k = traj.index_at(traj.t_star)
    z, zt, u = tail.evaluate(traj.times[k:])
    scale = np.max(np.abs(traj.Z))
    tail_err = max(np.max(np.abs(z - traj.Z[k:])), np.max(np.abs(u - traj.U[k:]))) / scale
    sigma_off = float(np.max(np.abs(traj.sigma[k:])))
    ok = worst <= 10 and tail_err <= 1e-6 and sigma_off == 0.0 and traj.margin.min() > 0.5
    return ok, tail_err, 1e-6, (f"max e^(bt/4)E0/E0(0) = {worst:.2f} (<= 10), T* = {traj.t_star:.2f}, "
                                f"sigma after T* = {sigma_off:.0e}")


@_timed("C5", "trace-fit residues against closed form, with u/z conversion")
def criterion_5():
    cfg = {"name": "residue-check", "initial": {"random_amplitude": 0.5},
           "observation": {"kind": "points", "locations": [["pi*(sqrt(5)-1)/2"], ["0.9"]]},
           "time": {"T": 22.0}}
    st = build(cfg)
    _, _, summary = extract_stage(st)
    err = summary["rel_error"]
    return err <= 1e-6, err, 1e-6, f"T* = {summary['t_star']:.2f}, fit condition {summary['fit_condition']:.1e}"


@_timed("C6", "Taylor remainder slopes for dkappa, db0, dc0^2")
def criterion_6():
    g = Grid((np.pi,), (64,))
    B = build_basis(g, 1.0, 1.0, 12)
    setup = default_setup()
    co = CoefficientField.on_grid(g, kappa=lambda x: 0.05 * np.sin(x), tau=0.1, b0=1.0)
    phi = SpatialProfile.from_modes(B, [1.0])
    src = build_excitation(phi, setup.psi, CoefficientField.on_grid(g, tau=0.1, b0=1.0), B)
    zero = np.zeros(B.n_modes)
    shape = g.evaluate(lambda x: 0.5 + 0.3 * np.sin(2 * x))
    dirs = {"dkappa": Direction(dkappa=g.evaluate(lambda x: 1 + 0.5 * np.cos(x))),
            "db0": Direction(db0=shape), "dc0_sq": Direction(dc0_sq=shape)}
    slopes = {}
    for name, d in dirs.items():
        # the sound-speed derivative is only claimed in the weaker norm
        pairs = taylor_remainder_check(co, setup.chi, src, d, [1e-1, 1e-2, 1e-3], B,
                                       (zero, zero, zero), 8.0, 2e-3, sample_every=10,
                                       norm="lower" if name == "dc0_sq" else "energy")
        slopes[name] = loglog_slope(pairs)
    worst = max(abs(s - 2) for s in slopes.values())
    detail = ", ".join(f"{k} {v:.3f}" for k, v in slopes.items())
    return worst <= 0.1, worst, 0.1, f"slopes {detail} (|slope - 2|; dc0_sq in the lower norm)"


@_timed("C7", "linearized round trip and lower bound")
def criterion_7(seed=0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        exp = default_setup("kappa-c0", M=8).experiment(M=8)
    rng = np.random.default_rng(seed)
    n = exp.modes().size
    K, C = rng.standard_normal(n), rng.standard_normal(n)
    rec = reconstruct(linearized_apply(exp, K=K, C=C), exp)
    rt = float(np.linalg.norm(np.r_[rec.K - K, rec.C - C]) / np.linalg.norm(np.r_[K, C]))
    worst = np.inf
    for _ in range(100):
        K, C = rng.standard_normal(n), rng.standard_normal(n)
        lhs = image_norm(linearized_apply(exp, K=K, C=C)) ** 2
        worst = min(worst, lhs / lower_bound(exp, K, C))
    ok = rt <= 1e-10 and worst >= 1.0
    return ok, rt, 1e-10, f"min ratio |F'd|^2 / bound = {worst:.3f} (>= 1), c_nu = {rec.c_nu:.3e}"


def _variant_error(variant, eps):
    st = default_setup(variant, M=4)
    exp = st.experiment()
    d = st.direction().scaled(eps)
    K, C = exp.coordinates(d)
    y = forward_residues(exp.coeff_for(d), exp.chi, exp)
    y0 = forward_residues(exp.coeff, exp.chi, exp)
    rec = reconstruct(y - y0, exp)
    return float(np.linalg.norm(np.r_[rec.K - K, rec.C - C]) / np.linalg.norm(np.r_[K, C]))


@_timed("C8", "end-to-end linearized inversion at eps = 1e-3")
def criterion_8(eps=1e-3):
    e_c0 = _variant_error("kappa-c0", eps)
    e_b0 = _variant_error("kappa-b0", eps)
    worst = max(e_c0, e_b0)
    return worst <= 10 * eps, worst, 10 * eps, f"(kappa, c0^2) {e_c0:.2e}, (kappa, b0) {e_b0:.2e}"


@_timed("C9", "frozen Newton recovers a 4-mode kappa")
def criterion_9():
    st = default_setup("kappa-only", M=4)
    exp = st.experiment()
    x_true = 1e-2 * np.array([1.0, -0.6, 0.4, 0.3])
    y = forward_residues(exp.coeff_for(exp.direction(x_true)), exp.chi, exp)
    res = newton_kappa(y, exp, iterations=10)
    err = float(np.linalg.norm(res.x - x_true) / np.linalg.norm(x_true))
    ok = err <= 1e-2 and res.iterations <= 10
    return ok, err, 1e-2, f"{res.iterations} iterations, final residual {res.residuals[-1]:.1e}"


@_timed("C10", "sensor at pi/2 fails injectivity on even modes")
def criterion_10(M=8):
    g = Grid((np.pi,), (64,))
    B = build_basis(g, 1.0, 1.0, 16)
    op = ObservationOp.points(g, [[np.pi / 2]])
    try:
        build_Blambda(op, B, M)
    except InjectivityError as exc:
        failed = sorted(gi + 1 for gi, _ in exc.failed)
    else:
        failed = []
    expected = list(range(2, M + 1, 2))
    ok = failed == expected
    return ok, float(len(set(failed) ^ set(expected))), 0.0, f"failed mode numbers {failed}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10]


# module invariants ----------------------------------------------------------

@_timed("S1", "1-D spectrum matches the analytic finite-difference eigenvalues")
def spectral_analytic():
    n = 64
    g = Grid((np.pi,), (n,))
    B = build_basis(g, 1.0, 1.0, 16)
    h = g.spacing[0]
    j = np.arange(1, 17)
    exact = 4 / h**2 * np.sin(j * h / 2) ** 2
    err = float(np.max(np.abs(B.eigenvalues - exact) / exact))
    return err <= 1e-10, err, 1e-10, ""


@_timed("S2", "weighted orthonormality with variable c0")
def spectral_orthonormal():
    g = Grid((np.pi,), (64,))
    B = build_basis(g, lambda x: 1 + 0.3 * np.sin(x), 1.0, 16)
    Gm = B.vectors.T @ (B.quad_weights[:, None] * B.vectors)
    err = float(np.max(np.abs(Gm - np.eye(B.n_modes))))
    return err <= 1e-12, err, 1e-12, ""


@_timed("S3", "2-D square groups degenerate eigenvalues")
def spectral_groups():
    g = Grid((np.pi, np.pi), (16, 16))
    B = build_basis(g, 1.0, 1.0, 10)
    mult = [len(gr) for gr in B.groups]
    ok = mult[:4] == [1, 2, 1, 2]
    return ok, float(sum(mult[:4]) != 6), 0.0, f"multiplicities {mult}"


@_timed("B1", "bundled linear-oscillator residues against closed form")
def bundled_linear_oscillator():
    rep = run("linear-oscillator", stages=("simulate", "extract"))
    err = rep.extract["rel_error"]
    return err <= 1e-6, err, 1e-6, ""


@_timed("B2", "bundled separable run has vanishing residues")
def bundled_separable():
    rep = run("separable", stages=("simulate", "extract"))
    v = max(rep.extract["max_abs_residue"], rep.extract["max_abs_fitted"])
    return v <= 1e-8, v, 1e-8, ""


SUITE_CHECKS = {
    "spectral": [spectral_analytic, spectral_orthonormal, spectral_groups],
    "solver": [criterion_2, criterion_3, criterion_4, criterion_6],
    "residue": [criterion_1, criterion_5, bundled_linear_oscillator, bundled_separable],
    "inversion": [criterion_7, criterion_8, criterion_9, criterion_10],
}


def verify(suite="all", progress=None):
    """Run a suite and return its CheckResults; ``progress`` is called per result."""
    if suite not in SUITES:
        raise DomainError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    names = ["spectral", "solver", "residue", "inversion"] if suite == "all" else [suite]
    results = []
    for nm in names:
        for chk in SUITE_CHECKS[nm]:
            try:
                res = chk()
            except Exception as exc:  # a crashing check is a failed check
                res = CheckResult(chk.key, chk.__name__, False, float("nan"), float("nan"),
                                  f"{type(exc).__name__}: {exc}")
            results.append(res)
            if progress is not None:
                progress(res)
    return results
