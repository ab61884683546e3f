"""Modal poles and residues, and their estimation from sampled traces.

Every mode of the linear tail satisfies z'' + b z' + c^2 lam z = r, so its
transform carries the resolvent 1 / omega_lam(z), omega_lam(z) = z^2 + b z
+ c^2 lam, with simple poles p+ and p-.  The u-component adds the pole
-1/tau of the relaxation factor (tau z + 1), which is treated as a nuisance.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad_vec

from .errors import DomainError, DoublePoleError, EstimationError, QuadratureError
from .model import ZeroSource, _GL_NODES, _GL_WEIGHTS

log = logging.getLogger(__name__)

CRITICAL_RTOL = 1e-12
FIT_COND_MAX = 1e8


@dataclass(frozen=True)
class PolePair:
    lam: float
    b_bar: float
    c: float
    p_plus: complex
    p_minus: complex
    discriminant: float
    regime: str

    @property
    def oscillatory(self):
        return self.regime == "oscillatory"

    def to_dict(self):
        return {"lambda": self.lam, "p_plus": [self.p_plus.real, self.p_plus.imag],
                "p_minus": [self.p_minus.real, self.p_minus.imag], "regime": self.regime}


def omega(lam, b_bar, c, z):
    return z * z + b_bar * z + c * c * lam


def poles(lam, b_bar, c):
    """Roots of omega_lam; p+ has the larger imaginary (or real) part."""
    if lam <= 0 or b_bar < 0 or c <= 0:
        raise DomainError("poles need lam > 0, b_bar >= 0, c > 0")
    disc = 4 * c * c * lam - b_bar * b_bar
    scale = max(4 * c * c * lam, b_bar * b_bar)
    if abs(disc) <= CRITICAL_RTOL * scale:
        raise DoublePoleError(f"4 c^2 lam = b^2 for lam={lam}: double pole at {-b_bar / 2}")
    if disc > 0:
        w = 0.5 * np.sqrt(disc)
        pp, pm = complex(-b_bar / 2, w), complex(-b_bar / 2, -w)
        regime = "oscillatory"
    else:
        # stable form of the real roots to avoid cancellation
        q = -0.5 * (b_bar + np.sqrt(-disc))
        r1, r2 = q, c * c * lam / q
        pp, pm = complex(max(r1, r2)), complex(min(r1, r2))
        regime = "overdamped"
    return PolePair(float(lam), float(b_bar), float(c), pp, pm, float(disc), regime)


def resolvent_residue(pair):
    """Residue of 1/omega at p+, i.e. 1/(p+ - p-); the residue at p- is its negative."""
    if pair.regime == "critical":
        raise DoublePoleError("critical mode has a double pole")
    if pair.oscillatory:
        return 1.0 / (1j * np.sqrt(pair.discriminant))
    return complex(1.0 / np.sqrt(-pair.discriminant))


def basis_poles(basis, b_bar, c=None, per_mode=True):
    """Pole pairs for every mode (or every eigenvalue group) of ``basis``."""
    c = basis.c if c is None else c
    lam = basis.eigenvalues if per_mode else basis.group_eigenvalues
    return [poles(float(x), b_bar, c) for x in lam]


# particular response -----------------------------------------------------

def _source_many(source, basis, t):
    if hasattr(source, "modal_many"):
        return np.asarray(source.modal_many(t))
    return np.array([source.modal(s, basis) for s in t])


def _is_zero(source):
    return source is None or isinstance(source, ZeroSource)


def duhamel(source, basis, pole_list, tau, t_start, times):
    """Modal response to ``source`` restricted to [t_start, inf) with zero data at t_start.

    Returns (z, z_t, u) sampled at ``times``, each of shape (len(times), n_modes).
    Exponential-integrator recursion: I_q(t') = e^{q(t'-t)} I_q(t) + int_t^t' e^{q(t'-s)} r(s) ds
    for q in {p+, p-, -1/tau}, with Gauss-Legendre panels per sampling interval.
    """
    times = np.asarray(times, dtype=float)
    n = basis.n_modes
    shape = (times.size, n)
    if _is_zero(source):
        z = np.zeros(shape)
        return z, z.copy(), z.copy()
    if np.any(np.diff(times) < 0) or (times.size and times[0] < t_start - 1e-12):
        raise DomainError("Duhamel times must be sorted and not precede t_start")
    pp = np.array([p.p_plus for p in pole_list])
    pm = np.array([p.p_minus for p in pole_list])
    qs = np.stack([pp, pm, np.full(n, -1.0 / tau, dtype=complex)])  # (3, n)
    qmax = float(np.abs(qs).max())

    knots = np.concatenate([[t_start], times])
    I = np.zeros((3, n), dtype=complex)
    out = np.zeros((times.size, 3, n), dtype=complex)
    for k in range(times.size):
        a, b = knots[k], knots[k + 1]
        if b > a:
            m = max(1, int(np.ceil(qmax * (b - a) / 2.0)))
            edges = np.linspace(a, b, m + 1)
            half = 0.5 * np.diff(edges)
            s = (edges[:-1, None] + half[:, None] * (_GL_NODES[None, :] + 1)).ravel()
            wts = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
            r = _source_many(source, basis, s)  # (ns, n)
            kern = np.exp(qs[:, None, :] * (b - s)[None, :, None])  # (3, ns, n)
            I = np.exp(qs * (b - a)) * I + np.einsum("s,qsn,sn->qn", wts, kern, r)
        out[k] = I
    d = pp - pm
    z = (out[:, 0] - out[:, 1]) / d
    zt = (pp * out[:, 0] - pm * out[:, 1]) / d
    cu = np.stack([1 / ((tau * pp + 1) * d), -1 / ((tau * pm + 1) * d),
                   1 / (tau * omega(np.array([p.lam for p in pole_list]), pole_list[0].b_bar,
                                    pole_list[0].c, -1.0 / tau))])
    u = np.einsum("tqn,qn->tn", out, cu)
    return np.real(z), np.real(zt), np.real(u)


def source_laplace_tail(source, basis, pole_list, t_start, chunk=4.0, max_chunks=400):
    """int_{t_start}^inf e^{-p s} r_j(s) ds at p = p+_j and p-_j, shape (n_modes, 2).

    Requires the source to decay faster than e^{b t / 2}.
    """
    n = basis.n_modes
    if _is_zero(source):
        return np.zeros((n, 2), dtype=complex)
    P = np.array([[p.p_plus, p.p_minus] for p in pole_list])

    def f(s):
        r = np.asarray(source.modal(s, basis))[:, None]
        v = np.exp(-P * s) * r
        return np.concatenate([v.real.ravel(), v.imag.ravel()])

    total, a = 0.0, float(t_start)
    for _ in range(max_chunks):
        part, _ = quad_vec(f, a, a + chunk, epsabs=1e-15, epsrel=1e-13, limit=500)
        total = total + part
        a += chunk
        if np.max(np.abs(part)) <= 1e-15 * max(np.max(np.abs(total)), 1e-300):
            break
    else:
        raise QuadratureError("source transform did not converge; the source decays too slowly")
    val = total
    half = val.size // 2
    return (val[:half] + 1j * val[half:]).reshape(n, 2)


# residue containers --------------------------------------------------------

@dataclass
class ResidueSet:
    """Residues R+-, one row per pole pair and one column per channel."""

    pole_pairs: list
    r_plus: np.ndarray
    r_minus: np.ndarray
    kind: str = "z"
    residual: float | None = None
    window: tuple | None = None
    labels: list = field(default_factory=list)

    def combinations(self, f1_hat, f2_hat):
        """(f1(p-)R+ + f1(p+)R-, f2(p-)R+ + f2(p+)R-) per pole pair."""
        pp = np.array([p.p_plus for p in self.pole_pairs])
        pm = np.array([p.p_minus for p in self.pole_pairs])
        ext = (slice(None),) + (None,) * (self.r_plus.ndim - 1)
        f1m, f1p = np.array([f1_hat(z) for z in pm]), np.array([f1_hat(z) for z in pp])
        f2m, f2p = np.array([f2_hat(z) for z in pm]), np.array([f2_hat(z) for z in pp])
        first = f1m[ext] * self.r_plus + f1p[ext] * self.r_minus
        second = f2m[ext] * self.r_plus + f2p[ext] * self.r_minus
        return first, second

    def to_dict(self):
        recs = []
        for i, p in enumerate(self.pole_pairs):
            rp, rm = np.atleast_1d(self.r_plus[i]), np.atleast_1d(self.r_minus[i])
            recs.append({"lambda": p.lam, "p_plus": [p.p_plus.real, p.p_plus.imag],
                         "p_minus": [p.p_minus.real, p.p_minus.imag],
                         "R_plus": [[x.real, x.imag] for x in rp],
                         "R_minus": [[x.real, x.imag] for x in rm],
                         "regime": p.regime})
        return {"kind": self.kind, "residual": self.residual,
                "window": list(self.window) if self.window else None, "modes": recs}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def modal_residue_closed_form(tail, rhat=None):
    """Exact residues of the full-history modal z-traces from a LinearTail.

    ``rhat`` (n_modes, 2) holds int_{T*}^inf e^{-p s} r(s) ds at (p+, p-);
    it is computed from the tail's source when omitted.
    """
    if rhat is None:
        rhat = source_laplace_tail(tail.source, tail.basis, tail.poles, tail.t_star)
    pp = np.array([p.p_plus for p in tail.poles])
    pm = np.array([p.p_minus for p in tail.poles])
    b = tail.poles[0].b_bar
    shift_p, shift_m = np.exp(-pp * tail.t_star), np.exp(-pm * tail.t_star)
    d = pp - pm
    # e^{-pT*}(z1 + (p + b) z0) / (p+ - p-) plus the forcing after T*
    r_plus = (shift_p * (tail.z1 + (pp + b) * tail.z0) + rhat[:, 0]) / d
    r_minus = (shift_m * (tail.z1 + (pm + b) * tail.z0) + rhat[:, 1]) / (-d)
    return ResidueSet(list(tail.poles), r_plus, r_minus, kind="z", residual=0.0,
                      window=(tail.t_star, np.inf), labels=list(range(len(tail.poles))))


# estimation from traces ---------------------------------------------------

class TraceResidues(NamedTuple):
    r_plus: np.ndarray
    r_minus: np.ndarray
    residual: float
    condition: float = 1.0
    extra: np.ndarray | None = None


def residue_from_trace(t, g, pole_pairs, method="fit", extra_poles=(), extra_terms=(), shift_terms=False,
                       tol=1e-6):
    """Residues of the full-history transform of a trace that is exponential on the window.

    Parameters
    ----------
    t : array
        Sample times covering [T0, T1] with T0 >= T*.
    g : array, shape (n_t,) or (n_t, n_channels)
        Trace samples, forcing response already removed.
    pole_pairs : PolePair or list of PolePair
        A single pair gives scalar-per-channel results; a list stacks rows.
    method : {"fit", "limit"}
        ``fit`` solves the least-squares problem in e^{p t} columns;
        ``limit`` averages e^{-p T} g(T) over the last period.
    extra_poles : sequence of complex
        Nuisance poles included in the fit (e.g. -1/tau for u-traces).
    extra_terms : sequence of (q, k)
        Nuisance columns (t - T0)^k e^{q (t - T0)} from higher-order poles,
        such as the response to a time profile t^n e^{-a t}.
    shift_terms : bool
        Add (t - T0) e^{p (t - T0)} for every pole, absorbing a first-order
        drift of the true poles away from the assumed ones.
    """
    t = np.asarray(t, dtype=float)
    g = np.asarray(g)
    single = isinstance(pole_pairs, PolePair)
    pairs = [pole_pairs] if single else list(pole_pairs)
    if method == "limit":
        if len(pairs) != 1:
            raise DomainError("the limit method handles a single pole pair")
        res = _limit(t, g, pairs[0])
    elif method == "fit":
        if shift_terms:
            extra_terms = list(extra_terms) + [(p, 1) for pr in pairs for p in (pr.p_plus, pr.p_minus)]
        res = _fit(t, g, pairs, extra_poles, extra_terms)
    else:
        raise DomainError(f"unknown residue method {method!r}")
    if method == "fit" and res.residual > tol:
        warnings.warn(f"trace-fit residual {res.residual:.2e} exceeds {tol:.0e}; "
                      "model poles may not match the data", RuntimeWarning, stacklevel=2)
    if single:
        return TraceResidues(res.r_plus[0], res.r_minus[0], res.residual, res.condition, res.extra)
    return res


def _fit(t, g, pairs, extra_poles, extra_terms=()):
    t0 = t[0]
    cols = []
    for p in pairs:
        cols += [p.p_plus, p.p_minus]
    cols += list(extra_poles)
    q = np.array(cols, dtype=complex)
    D = np.exp(np.outer(t - t0, q))
    if len(extra_terms):
        D = np.hstack([D] + [((t - t0) ** k * np.exp(qq * (t - t0)))[:, None].astype(complex)
                             for qq, k in extra_terms])
    scale = np.linalg.norm(D, axis=0)
    if np.any(scale == 0):
        raise EstimationError("degenerate fit column")
    Dn = D / scale
    cond = float(np.linalg.cond(Dn))
    if not np.isfinite(cond) or cond > FIT_COND_MAX:
        raise EstimationError(f"residue fit condition number {cond:.2e} exceeds {FIT_COND_MAX:.0e}; "
                              "lengthen the window or drop poles")
    coef, *_ = np.linalg.lstsq(Dn, g.astype(complex), rcond=None)
    ext = (slice(None),) + (None,) * (g.ndim - 1)
    coef = coef / scale[ext]
    fit = D @ coef
    coef = coef[: q.size]
    gnorm = np.linalg.norm(g)
    residual = float(np.linalg.norm(g - fit) / gnorm) if gnorm > 0 else float(np.linalg.norm(fit))
    # coefficients of e^{p(t - t0)} become residues of the transform via e^{-p t0}
    R = coef * np.exp(-q * t0)[ext]
    k = 2 * len(pairs)
    return TraceResidues(R[0:k:2], R[1:k:2], residual, cond, R[k:] if len(extra_poles) else None)


def _limit(t, g, pair):
    if pair.oscillatory:
        period = np.pi / abs(pair.p_plus.imag)
        sel = t >= t[-1] - period
        if np.count_nonzero(sel) < 8:
            raise EstimationError("not enough samples in the last period for the limit method")
        ts, gs = t[sel], g[sel]
        ext = (slice(None),) + (None,) * (g.ndim - 1)
        span = ts[-1] - ts[0]
        vals = []
        for p in (pair.p_plus, pair.p_minus):
            h = np.exp(-p * ts)[ext] * gs
            vals.append(np.trapezoid(h, ts, axis=0) / span)
        rp, rm = vals
        h = np.exp(-pair.p_plus * ts)[ext] * gs
        spread = float(np.max(np.abs(h - rp)) / max(np.max(np.abs(rp)), 1e-300))
    else:
        rp = np.exp(-pair.p_plus * t[-1]) * g[-1]
        rm = np.full_like(rp, np.nan, dtype=complex)
        spread = float("nan")
    # the residual of the limit method is the relative spread of e^{-pT} g(T)
    return TraceResidues(np.asarray(rp)[None], np.asarray(rm)[None],
                         spread if np.isfinite(spread) else 0.0)


def u_to_z_residues(R_u, p, tau, inverse=False):
    """Convert residues of u-traces to z = tau u_t + u traces: R_z = (tau p + 1) R_u."""
    p = np.asarray(p)
    factor = tau * p + 1
    if tau > 0 and np.any(np.abs(p + 1.0 / tau) <= 1e-9):
        raise EstimationError("pole coincides with -1/tau; u/z conversion is singular")
    ext = (slice(None),) * p.ndim + (None,) * (np.ndim(R_u) - p.ndim)
    f = factor[ext] if p.ndim else factor
    return R_u / f if inverse else R_u * f


def estimate_poles(t, g, order, rank_tol=1e-10):
    """Matrix-pencil estimate of the ``order`` dominant poles of a uniformly sampled trace."""
    order = int(order)
    if order == 0:
        return []
    t = np.asarray(t, dtype=float)
    g = np.asarray(g, dtype=complex).ravel()
    n = g.size
    if order > n // 4:
        raise DomainError(f"model order {order} exceeds samples/4 = {n // 4}")
    dt = np.diff(t)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * max(abs(dt[0]), 1.0):
        raise DomainError("matrix pencil requires uniform sampling")
    L = n // 2
    Y = np.lib.stride_tricks.sliding_window_view(g, L + 1)  # (n - L, L + 1) Hankel
    _, s, Vh = np.linalg.svd(Y, full_matrices=False)
    if s[order - 1] <= rank_tol * s[0]:
        raise EstimationError(f"trace has numerical rank below the requested order {order}")
    Vc = Vh[:order].T
    z = np.linalg.eigvals(np.linalg.pinv(Vc[:-1]) @ Vc[1:])
    p = np.log(z.astype(complex)) / dt[0]
    return sorted(p.tolist(), key=lambda x: (abs(x.imag), x.imag))
