"""Coefficients, cutoff switch, excitation profiles and their Laplace transforms."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from math import comb, factorial

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, QuadratureError, UnsupportedConfigurationError

NU_THRESHOLD = 1e-12
# phi and Lap(phi) must exceed this fraction of their maxima on the reconstruction subdomain
PROFILE_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Space dependent kappa, c0^2, b0 on the grid nodes plus constants tau, c.

    kappa is in 1/Pa, c0_sq in m^2/s^2, b0 in 1/s, tau in s and c in m/s.
    """

    kappa: np.ndarray
    c0_sq: np.ndarray
    b0: np.ndarray
    tau: float
    c: float

    def __post_init__(self):
        for name in ("kappa", "c0_sq", "b0"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if not (self.kappa.shape == self.c0_sq.shape == self.b0.shape):
            raise DomainError("coefficient fields must share one grid")
        if np.any(self.c0_sq <= 0):
            raise DomainError("c0_sq must be strictly positive")
        if np.any(self.b0 < 0):
            raise DomainError("b0 must be non-negative")
        if not self.tau > 0:
            raise DomainError("tau must be positive")
        if not self.c > 0:
            raise DomainError("c must be positive")

    @classmethod
    def on_grid(cls, grid, kappa=0.0, c0_sq=1.0, b0=1.0, tau=0.1, c=1.0):
        return cls(kappa=grid.evaluate(kappa), c0_sq=grid.evaluate(c0_sq),
                   b0=grid.evaluate(b0), tau=float(tau), c=float(c))

    @property
    def constant_b0(self):
        return bool(np.ptp(self.b0) == 0.0)

    @property
    def b_bar(self):
        if not self.constant_b0:
            raise UnsupportedConfigurationError("b0 is not constant")
        return float(self.b0[0])

    def perturbed(self, dkappa=0.0, dc0_sq=0.0, db0=0.0):
        return replace(self, kappa=self.kappa + dkappa, c0_sq=self.c0_sq + dc0_sq,
                       b0=self.b0 + db0)


@dataclass(frozen=True)
class Cutoff:
    """Quintic smoothstep between ``m_lo`` and ``m_hi`` (C^2, monotone)."""

    m_lo: float
    m_hi: float

    def __post_init__(self):
        if not 0 < self.m_lo < self.m_hi:
            raise DomainError(f"cutoff needs 0 < m_lo < m_hi, got {self.m_lo}, {self.m_hi}")

    @property
    def width(self):
        return self.m_hi - self.m_lo

    def _xi(self, s):
        return np.clip((np.asarray(s, dtype=float) - self.m_lo) / self.width, 0.0, 1.0)

    def value(self, s):
        x = self._xi(s)
        return x**3 * (10 - 15 * x + 6 * x**2)

    def d1(self, s):
        x = self._xi(s)
        return 30 * x**2 * (1 - x) ** 2 / self.width

    def d2(self, s):
        x = self._xi(s)
        return 60 * x * (1 - x) * (1 - 2 * x) / self.width**2


def cutoff_eval(chi, s):
    """Value and first derivative of the cutoff at ``s >= 0``."""
    if np.any(np.asarray(s) < 0):
        raise DomainError("cutoff argument must be non-negative")
    return chi.value(s), chi.d1(s)


def sigma_of_state(chi, z, basis):
    """Switch value chi(|z|_{L2}^2) for a grid field z (unweighted norm)."""
    z = np.asarray(z, dtype=float)
    return float(chi.value(basis.l2_inner(z, z)))


@dataclass(frozen=True)
class TimeProfile:
    """psi(t) = amplitude * t^q * exp(-a t)."""

    q: int = 4
    a: float = 2.0
    amplitude: float = 1.0

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 3:
            raise DomainError("q must be an integer >= 3 so that psi, psi', psi'' vanish at 0")
        if not self.a > 0:
            raise DomainError("decay rate a must be positive")

    def poly(self, k=0):
        """Ascending coefficients P_k with psi^(k)(t) = amplitude * P_k(t) * exp(-a t)."""
        q, a = self.q, self.a
        out = np.zeros(q + 1)
        for i in range(min(k, q) + 1):
            out[q - i] += comb(k, i) * (factorial(q) / factorial(q - i)) * (-a) ** (k - i)
        return out

    def derivative(self, t, k=0):
        """k-th derivative of psi, by Leibniz on t^q * exp(-a t)."""
        t = np.asarray(t, dtype=float)
        return self.amplitude * np.polynomial.polynomial.polyval(t, self.poly(k)) * np.exp(-self.a * t)

    def __call__(self, t):
        return self.derivative(t, 0)

    def relaxed(self, t, tau, k=0):
        """k-th derivative of psi_tau = tau psi' + psi."""
        return tau * self.derivative(t, k + 1) + self.derivative(t, k)

    def laplace(self, z):
        z = np.asarray(z, dtype=complex)
        return self.amplitude * factorial(self.q) / (z + self.a) ** (self.q + 1)


@dataclass(frozen=True, eq=False)
class SpatialProfile:
    """Spatial factor phi of the separable excitation.

    Stores grid values, modal coefficients, grid values of -Lap_h phi and the
    mask of the reconstruction subdomain on which phi and Lap phi are
    required to stay away from zero.
    """

    values: np.ndarray
    modal: np.ndarray
    neg_laplacian: np.ndarray
    rec_mask: np.ndarray
    min_phi: float = field(init=False)
    min_lap: float = field(init=False)

    def __post_init__(self):
        m = self.rec_mask
        if not m.any():
            raise DomainError("reconstruction subdomain contains no nodes")
        object.__setattr__(self, "min_phi", float(np.abs(self.values[m]).min()))
        object.__setattr__(self, "min_lap", float(np.abs(self.neg_laplacian[m]).min()))
        if (self.min_phi <= PROFILE_RTOL * np.abs(self.values).max()
                or self.min_lap <= PROFILE_RTOL * np.abs(self.neg_laplacian).max()):
            raise DomainError(
                f"phi or Lap(phi) vanishes on the reconstruction subdomain "
                f"(min|phi|={self.min_phi:.3g}, min|Lap phi|={self.min_lap:.3g})")

    @classmethod
    def from_modes(cls, basis, coefficients, rec_box=(0.2, 0.8)):
        """phi = sum_j coefficients[j] phi_j; ``rec_box`` is the fraction of
        every axis covered by the reconstruction subdomain."""
        modal = np.zeros(basis.n_modes)
        coefficients = np.asarray(coefficients, dtype=float)
        modal[: coefficients.size] = coefficients
        values = basis.to_grid(modal)
        return cls(values=values, modal=modal, neg_laplacian=basis.neg_laplacian_of(modal),
                   rec_mask=rec_mask(basis.grid, rec_box))

    @classmethod
    def fitted_bump(cls, basis, n_modes=3, rec_box=(0.2, 0.8), level=1.0):
        """Least-squares fit of the first ``n_modes`` eigenfunctions to a
        constant on the reconstruction subdomain."""
        mask = rec_mask(basis.grid, rec_box)
        Phi = basis.vectors[mask, :n_modes]
        coef, *_ = np.linalg.lstsq(Phi, np.full(mask.sum(), level), rcond=None)
        return cls.from_modes(basis, coef, rec_box)

    def l2_norm_sq(self, basis):
        return basis.l2_inner(self.values, self.values)


def rec_mask(grid, rec_box):
    lo, hi = rec_box
    xyz = grid.coordinates()
    mask = np.ones(grid.size, dtype=bool)
    for d, L in enumerate(grid.extents):
        mask &= (xyz[:, d] >= lo * L) & (xyz[:, d] <= hi * L)
    return mask


class Source:
    """Time dependent right-hand side r(x, t) seen by the solver in modal form."""

    def modal(self, t, basis):
        raise NotImplementedError

    def grid(self, t, basis):
        return basis.to_grid(self.modal(t, basis))


class ZeroSource(Source):
    def modal(self, t, basis):
        return np.zeros(basis.n_modes)

    def grid(self, t, basis):
        return np.zeros(basis.grid.size)


class GridSource(Source):
    """Arbitrary r given as ``f(t) -> grid values``; projected on every call."""

    def __init__(self, f):
        self.f = f

    def modal(self, t, basis):
        return basis.to_modal(self.f(t))

    def grid(self, t, basis):
        return np.asarray(self.f(t), dtype=float)


@dataclass(frozen=True, eq=False)
class SeparableExcitation(Source):
    """r = phi psi_tau'' + c^2 (A phi) psi_tau + b phi psi_tau' for background (c0, b).

    With kappa = 0 and these background coefficients the state is u = phi psi.
    """

    phi: SpatialProfile
    psi: TimeProfile
    tau: float
    c: float
    b_bar: float
    eigenvalues: np.ndarray

    def _time_factors(self, t):
        tau = self.tau
        return (self.psi.relaxed(t, tau, 2), self.psi.relaxed(t, tau, 1),
                self.psi.relaxed(t, tau, 0))

    @cached_property
    def _scalar_form(self):
        # modal(t) = (g1(t) a + g0(t) lam a) e^{-a t} with polynomial g1, g0
        tau, psi = self.tau, self.psi
        rel = [tau * psi.poly(k + 1) + psi.poly(k) for k in range(3)]
        g1 = psi.amplitude * (rel[2] + self.b_bar * rel[1])
        g0 = psi.amplitude * self.c**2 * rel[0]
        a = np.asarray(self.phi.modal)
        return g1[::-1].tolist(), g0[::-1].tolist(), a, np.asarray(self.eigenvalues) * a

    def modal(self, t, basis=None):
        if np.ndim(t):
            return self.modal_many(np.atleast_1d(t))[0] if np.size(t) == 1 else self.modal_many(t)
        g1, g0, a, la = self._scalar_form
        t = float(t)
        v1 = v0 = 0.0
        for x in g1:
            v1 = v1 * t + x
        for x in g0:
            v0 = v0 * t + x
        e = math.exp(-self.psi.a * t)
        return (v1 * e) * a + (v0 * e) * la

    def modal_many(self, t):
        """Modal source at an array of times, shape (len(t), n_modes)."""
        t = np.asarray(t, dtype=float)[:, None]
        d2, d1, d0 = self._time_factors(t)
        a = self.phi.modal[None, :]
        return a * (d2 + self.b_bar * d1) + self.c**2 * (self.eigenvalues * self.phi.modal)[None, :] * d0

    def grid(self, t, basis):
        return basis.to_grid(self.modal(t))

    def state(self, t, basis):
        """Exact separable state (u, u_t, u_tt) in modal form at time t."""
        a = self.phi.modal
        return tuple(a * self.psi.derivative(t, k) for k in range(3))


def build_excitation(phi, psi, coeff, basis):
    """Separable source for the background coefficients ``coeff``.

    Raises UnsupportedConfigurationError when b0 is not constant.
    """
    if not coeff.constant_b0:
        raise UnsupportedConfigurationError("the separable excitation needs constant b0")
    return SeparableExcitation(phi=phi, psi=psi, tau=coeff.tau, c=coeff.c,
                               b_bar=coeff.b_bar, eigenvalues=np.asarray(basis.eigenvalues))


# Laplace transforms of the weight functions ------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _crossings(f, levels, t_max, n_scan=40000):
    t = np.linspace(0.0, t_max, n_scan)
    vals = f(t)
    out = []
    for level in levels:
        g = vals - level
        idx = np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)
        out.extend(brentq(lambda s: f(s) - level, t[i], t[i + 1], xtol=1e-15) for i in idx)
    return sorted(out)


def gauss_laplace(f, breaks, z, rtol=1e-14, max_level=14):
    """Laplace integral of f over [breaks[0], breaks[-1]] by composite
    Gauss-Legendre on dyadically refined panels.

    ``f`` must be smooth inside every panel delimited by ``breaks``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    breaks = np.asarray(breaks, dtype=float)
    prev = None
    for level in range(max_level):
        n_sub = 2**level
        edges = np.concatenate([np.linspace(a, b, n_sub + 1)[:-1] for a, b in
                                zip(breaks[:-1], breaks[1:])] + [breaks[-1:]])
        left, right = edges[:-1], edges[1:]
        half = 0.5 * (right - left)
        t = (0.5 * (left + right))[:, None] + half[:, None] * _GL_NODES[None, :]
        w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
        t = t.ravel()
        fw = f(t) * w
        cur = np.exp(-np.outer(z, t)) @ fw
        if prev is not None:
            scale = max(1.0, float(np.max(np.abs(cur))))
            if np.max(np.abs(cur - prev)) <= rtol * scale and level >= 2:
                return cur
        prev = cur
    raise QuadratureError("composite Gauss quadrature did not converge")


@dataclass(frozen=True, eq=False)
class FWeights:
    """Time weights f1, f2 of the linearised source and their transforms.

    ``f2_form='exact'`` uses f2 = d/dt [sigma (psi^2)'], the coefficient the
    linearisation at kappa = 0 actually produces; ``'simplified'`` drops the
    d(sigma)/dt contribution and uses sigma (psi^2)''.
    """

    psi: TimeProfile
    chi: Cutoff
    phi_norm_sq: float
    tau: float
    variant: str
    f2_form: str = "exact"
    breaks: tuple = ()

    def sigma(self, t):
        return self.chi.value(self._s(t))

    def _s(self, t):
        return self.phi_norm_sq * self.psi.relaxed(t, self.tau) ** 2

    def f1(self, t):
        if self.variant == "sound-speed":
            return self.psi.relaxed(t, self.tau, 0)
        return self.psi.relaxed(t, self.tau, 1)

    def f2(self, t):
        t = np.asarray(t, dtype=float)
        p, p1, p2, p3 = (self.psi.derivative(t, k) for k in range(4))
        sq1 = 2 * p * p1                     # (psi^2)'
        sq2 = 2 * (p1**2 + p * p2)           # (psi^2)''
        s = self._s(t)
        out = self.chi.value(s) * sq2
        if self.f2_form == "exact":
            ds = 2 * self.phi_norm_sq * self.psi.relaxed(t, self.tau) * self.psi.relaxed(t, self.tau, 1)
            out = out + self.chi.d1(s) * ds * sq1
        return out

    def f1_hat(self, z):
        z = np.asarray(z, dtype=complex)
        base = (self.tau * z + 1) * self.psi.laplace(z)
        return base if self.variant == "sound-speed" else z * base

    def f2_hat(self, z):
        z = np.asarray(z, dtype=complex)
        if len(self.breaks) < 2:
            return np.zeros_like(z)
        return gauss_laplace(self.f2, self.breaks, z.ravel()).reshape(z.shape)


def f_weights(psi, chi, phi, tau, variant="sound-speed", basis=None, f2_form="exact"):
    """Build the weight pair (f1, f2) for the sound-speed or attenuation variant.

    ``phi`` is a SpatialProfile (then ``basis`` is needed for |phi|_{L2}^2)
    or the squared norm itself.
    """
    if variant not in ("sound-speed", "attenuation"):
        raise DomainError(f"unknown variant {variant!r}")
    if f2_form not in ("exact", "simplified"):
        raise DomainError(f"unknown f2 form {f2_form!r}")
    norm_sq = phi.l2_norm_sq(basis) if isinstance(phi, SpatialProfile) else float(phi)
    fw = FWeights(psi=psi, chi=chi, phi_norm_sq=norm_sq, tau=tau, variant=variant, f2_form=f2_form)
    # f2 vanishes wherever |phi|^2 psi_tau^2 <= m_lo, so its support is bounded
    t_max = (psi.q + 60.0) / psi.a
    cross = _crossings(fw._s, [chi.m_lo, chi.m_hi], t_max)
    if cross:
        object.__setattr__(fw, "breaks", tuple(cross))
    return fw


@dataclass(frozen=True)
class NuFactors:
    values: np.ndarray
    flagged: np.ndarray


def nu_factors(f1_hat, f2_hat, poles):
    """nu_m = f1^(p-) f2^(p+) - f1^(p+) f2^(p-) for each pole pair.

    ``poles`` is a sequence of (p_plus, p_minus) pairs or PolePair objects.
    Entries with |nu_m| below 1e-12 are flagged, not raised.
    """
    pairs = [(p.p_plus, p.p_minus) if hasattr(p, "p_plus") else (p[0], p[1]) for p in poles]
    pp = np.array([a for a, _ in pairs], dtype=complex)
    pm = np.array([b for _, b in pairs], dtype=complex)
    if pp.size == 0:
        return NuFactors(values=np.zeros(0, complex), flagged=np.zeros(0, bool))
    nu = f1_hat(pm) * f2_hat(pp) - f1_hat(pp) * f2_hat(pm)
    return NuFactors(values=nu, flagged=np.abs(nu) < NU_THRESHOLD)
