"""Time integration of the switched JMGT equation in the eigenbasis.

The state is (u, u_t, u_tt) in modal coordinates of a fixed background
basis.  Written for w = u_tt the equation reads

    tau w' = -(1 - 2 kappa sigma u) w + 2 kappa (sigma u)_t u_t
             - c^2 A z - b0 z_t + r,          z = tau u_t + u,

with sigma = chi(|z|_{L2}^2).  Products with kappa, and with b0 or c0^2 when
they differ from the background, are formed on the grid and projected back
onto the retained modes, which is the only dealiasing applied.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegeneracyError, DomainError, InstabilityError, NotSwitchedOffError,
                     UnsupportedConfigurationError)
from .model import ZeroSource

log = logging.getLogger(__name__)


@dataclass
class State:
    t: float
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    sigma: float = 0.0
    sigma_dot: float = 0.0


@dataclass(frozen=True)
class Direction:
    """Perturbation (dkappa, dc0_sq, db0) of the coefficient fields, on the grid."""

    dkappa: np.ndarray | float = 0.0
    dc0_sq: np.ndarray | float = 0.0
    db0: np.ndarray | float = 0.0

    def scaled(self, a):
        return Direction(a * np.asarray(self.dkappa), a * np.asarray(self.dc0_sq),
                         a * np.asarray(self.db0))

    def sup_norm(self):
        return float(max(np.max(np.abs(self.dkappa)), np.max(np.abs(self.dc0_sq)),
                         np.max(np.abs(self.db0))))

    def is_zero(self):
        return self.sup_norm() == 0.0


class Solver:
    """RK4 integrator for one coefficient set on a fixed background basis.

    Parameters
    ----------
    basis : EigenBasis
        Background eigensystem; ``coeff.c0_sq`` may differ from ``basis.c0_sq``.
    coeff : CoefficientField
    chi : Cutoff
    source : Source, optional
    dt : float
    delta0 : float
        Required margin of the leading coefficient 1 - 2 kappa sigma u.
    """

    def __init__(self, basis, coeff, chi, source=None, dt=1e-3, delta0=0.5):
        if basis.c != coeff.c:
            raise DomainError("basis and coefficients use different reference speeds c")
        self.basis, self.coeff, self.chi = basis, coeff, chi
        self.source = source if source is not None else ZeroSource()
        self.dt = float(dt)
        self.delta0 = float(delta0)
        self.tau, self.c = coeff.tau, coeff.c
        Phi = basis.vectors
        self.Phi = Phi
        self.P = (Phi * basis.quad_weights[:, None]).T
        self.lam = np.asarray(basis.eigenvalues)
        self.G = basis.unweighted_gram()

        ratio = coeff.c0_sq / basis.c0_sq
        self.c0_ratio = ratio
        self.A_matrix = None
        if not np.allclose(ratio, 1.0, rtol=0, atol=1e-15):
            self.A_matrix = self.P @ (ratio[:, None] * Phi) * self.lam[None, :]
        self.B_matrix = None
        if coeff.constant_b0:
            self.b_scalar = coeff.b_bar
        else:
            self.B_matrix = self.P @ (coeff.b0[:, None] * Phi)
        self.kappa = coeff.kappa
        self.nonlinear = bool(np.any(self.kappa != 0))

        lam_eff = self.lam.max() * ratio.max()
        limit = 0.5 * self.tau / (1 + self.tau * self.c * np.sqrt(lam_eff))
        if self.dt > limit:
            raise DomainError(f"dt={self.dt:.3g} exceeds the stability bound {limit:.3g}")

    # operators ---------------------------------------------------------
    def A(self, Z):
        return self.lam * Z if self.A_matrix is None else self.A_matrix @ Z

    def B(self, Zt):
        return self.b_scalar * Zt if self.B_matrix is None else self.B_matrix @ Zt

    def switch(self, Z, Zt):
        s = Z @ self.G @ Z
        sdot = 2 * Z @ self.G @ Zt
        return s, sdot, float(self.chi.value(s)), float(self.chi.d1(s) * sdot)

    def rhs(self, t, U, V, W):
        tau = self.tau
        Z, Zt = tau * V + U, tau * W + V
        acc = -W - self.c**2 * self.A(Z) - self.B(Zt) + self.source.modal(t, self.basis)
        if self.nonlinear:
            s, sdot, sig, sigd = self.switch(Z, Zt)
            if sig != 0.0 or sigd != 0.0:
                u, v, w = self.Phi @ U, self.Phi @ V, self.Phi @ W
                nl = 2 * self.kappa * (sig * u * w + (sigd * u + sig * v) * v)
                acc = acc + self.P @ nl
        return V, W, acc / tau

    def step(self, state):
        dt, t = self.dt, state.t
        U, V, W = state.U, state.V, state.W
        k1 = self.rhs(t, U, V, W)
        k2 = self.rhs(t + dt / 2, *(x + dt / 2 * k for x, k in zip((U, V, W), k1)))
        k3 = self.rhs(t + dt / 2, *(x + dt / 2 * k for x, k in zip((U, V, W), k2)))
        k4 = self.rhs(t + dt, *(x + dt * k for x, k in zip((U, V, W), k3)))
        new = [x + dt / 6 * (a + 2 * b + 2 * c + d)
               for x, a, b, c, d in zip((U, V, W), k1, k2, k3, k4)]
        out = State(t + dt, *new)
        self._check(out)
        return out

    def _check(self, state):
        if not (np.all(np.isfinite(state.U)) and np.all(np.isfinite(state.W))):
            raise InstabilityError(state.t, self.dt)
        Z, Zt = self.tau * state.V + state.U, self.tau * state.W + state.V
        _, _, sig, sigd = self.switch(Z, Zt)
        state.sigma, state.sigma_dot = sig, sigd
        if self.nonlinear and sig > 0:
            lead = 1 - 2 * self.kappa * sig * (self.Phi @ state.U)
            node = int(np.argmin(lead))
            if lead[node] < self.delta0:
                raise DegeneracyError(state.t, node, float(lead[node]))

    def margin(self, state):
        if not self.nonlinear:
            return 1.0
        return float(np.min(1 - 2 * self.kappa * state.sigma * (self.Phi @ state.U)))

    # diagnostics -------------------------------------------------------
    def energy(self, U, V, W):
        """Wave energy 1/2 (|z_t|^2 + c^2 sum lam |<z,phi>|^2) = 1/2(|z_t|^2 + c^2|grad z|^2)."""
        Z, Zt = self.tau * V + U, self.tau * W + V
        return 0.5 * (Zt @ self.G @ Zt + self.c**2 * np.sum(self.lam * Z**2))

    def energy_c0(self, U, V, W):
        """1/2 (|z_t|^2 + |c0 grad z|^2) with forward differences on the grid."""
        Z, Zt = self.tau * V + U, self.tau * W + V
        return 0.5 * (Zt @ self.G @ Zt + c0_gradient_sq(self.Phi @ Z, self.coeff.c0_sq,
                                                         self.basis.grid))

    def simulate(self, initial, T, sample_every=1, t0=0.0, detect=True, extend_to=None):
        """Integrate from ``t0`` to ``T`` and return a Trajectory.

        ``initial`` holds modal (u0, u1, u2).  When ``detect`` is set and the
        switch-off time cannot be certified by ``T``, integration continues in
        chunks up to ``extend_to``.
        """
        U, V, W = (np.array(x, dtype=float) for x in initial)
        if U.shape != (self.basis.n_modes,):
            raise DomainError("initial data must be modal vectors of basis length")
        state = State(float(t0), U, V, W)
        self._check(state)
        rec = _Recorder(self)
        rec.add(state)
        n_steps = int(round((T - t0) / self.dt))
        state = self._run(state, n_steps, sample_every, rec)
        traj = rec.finish()
        if detect:
            limit = extend_to if extend_to is not None else T
            while True:
                try:
                    traj.t_star = detect_Tstar(traj)
                    break
                except NotSwitchedOffError:
                    if state.t >= limit - 1e-12:
                        log.info("switch-off not certified by t=%.3g", state.t)
                        break
                    chunk = int(round(min(T - t0, limit - state.t) / self.dt))
                    state = self._run(state, max(chunk, 1), sample_every, rec)
                    traj = rec.finish()
        return traj

    def _run(self, state, n_steps, sample_every, rec):
        t_start = state.t
        for i in range(1, n_steps + 1):
            state = self.step(state)
            state.t = t_start + i * self.dt
            if i % sample_every == 0:
                rec.add(state)
        return state


class _Recorder:
    def __init__(self, solver):
        self.s = solver
        self.rows = []

    def add(self, st):
        s = self.s
        Z, Zt = s.tau * st.V + st.U, s.tau * st.W + st.V
        zsq = float(Z @ s.G @ Z)
        self.rows.append((st.t, st.U.copy(), st.V.copy(), st.W.copy(), st.sigma, zsq,
                          s.energy(st.U, st.V, st.W), s.margin(st)))

    def finish(self):
        t, U, V, W, sig, zsq, E, marg = zip(*self.rows)
        return Trajectory(times=np.array(t), U=np.array(U), V=np.array(V), W=np.array(W),
                          sigma=np.array(sig), zsq=np.array(zsq), energy=np.array(E),
                          margin=np.array(marg), solver=self.s)


@dataclass
class Trajectory:
    times: np.ndarray
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    sigma: np.ndarray
    zsq: np.ndarray
    energy: np.ndarray
    margin: np.ndarray
    solver: Solver = field(repr=False)
    t_star: float | None = None

    @property
    def basis(self):
        return self.solver.basis

    @property
    def tau(self):
        return self.solver.tau

    @property
    def Z(self):
        return self.tau * self.V + self.U

    @property
    def Zt(self):
        return self.tau * self.W + self.V

    def u_grid(self):
        return self.U @ self.basis.vectors.T

    def index_at(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"t={t} is not a sample time")
        return i

    def terminal_data(self):
        """(z, z_t, u) at the detected switch-off time."""
        if self.t_star is None:
            raise NotSwitchedOffError("switch-off time has not been detected")
        i = self.index_at(self.t_star)
        return self.Z[i], self.Zt[i], self.U[i]

    def energy_c0(self):
        s = self.solver
        return np.array([s.energy_c0(u, v, w) for u, v, w in zip(self.U, self.V, self.W)])

    def rows(self):
        """Per-sample diagnostics (t, E0, sigma, |z|^2)."""
        return np.column_stack([self.times, self.energy, self.sigma, self.zsq])


def c0_gradient_sq(z, c0_sq, grid):
    """|c0 grad z|_{L2}^2 by forward differences, z extended by zero boundary values."""
    shape = grid.shape
    zz = np.pad(z.reshape(shape), 1)
    cc = np.pad(c0_sq.reshape(shape), 1, mode="edge")
    total = 0.0
    for d, h in enumerate(grid.spacing):
        dz = np.diff(zz, axis=d) / h
        cmid = 0.5 * (np.take(cc, range(cc.shape[d] - 1), axis=d) + np.take(cc, range(1, cc.shape[d]), axis=d))
        sl = [slice(1, -1)] * len(shape)
        sl[d] = slice(None)
        total += np.sum((cmid * dz**2)[tuple(sl)])
    return float(total * grid.cell)


def step(state, dt, coeff, chi, r, basis, delta0=0.5):
    """Advance one RK4 step; functional wrapper around Solver.step."""
    return Solver(basis, coeff, chi, r, dt=dt, delta0=delta0).step(state)


def simulate(coeff, chi, r, initial, T, dt, basis, sample_every=1, **kw):
    return Solver(basis, coeff, chi, r, dt=dt).simulate(initial, T, sample_every=sample_every, **kw)


def detect_Tstar(traj, persistence=None):
    """First sample time after which |z|^2 <= m_lo for every later sample.

    The quiet stretch must last ``persistence`` seconds (default 2 / b) so
    that a late re-entry is not missed.
    """
    m_lo = traj.solver.chi.m_lo
    above = np.flatnonzero(traj.zsq > m_lo)
    if above.size == 0:
        return float(traj.times[0])
    k = above[-1] + 1
    span = traj.times[-1] - traj.times[k] if k < traj.times.size else -1.0
    if persistence is None:
        b = float(np.mean(traj.solver.coeff.b0))
        persistence = 2.0 / b if b > 0 else 0.0
    if k >= traj.times.size or span < persistence:
        raise NotSwitchedOffError(
            "|z|^2 did not stay below m_lo long enough; increase b0 or the horizon T")
    return float(traj.times[k])


# linear tail -----------------------------------------------------------

@dataclass
class LinearTail:
    """Closed-form modal solution from T* on.

    z_j(t) = A+ e^{p+(t-T*)} + A- e^{p-(t-T*)} + particular part driven by r.
    """

    t_star: float
    z0: np.ndarray
    z1: np.ndarray
    u0: np.ndarray
    poles: list
    A_plus: np.ndarray
    A_minus: np.ndarray
    tau: float
    source: object
    basis: object = field(repr=False)

    def _homogeneous(self, t):
        s = np.asarray(t, dtype=float)[:, None] - self.t_star
        pp = np.array([p.p_plus for p in self.poles])[None, :]
        pm = np.array([p.p_minus for p in self.poles])[None, :]
        ep, em = np.exp(pp * s), np.exp(pm * s)
        z = self.A_plus * ep + self.A_minus * em
        zt = self.A_plus * pp * ep + self.A_minus * pm * em
        q = -1.0 / self.tau
        et = np.exp(q * s)
        u = (et * self.u0 + self.A_plus * (ep - et) / (self.tau * pp + 1)
             + self.A_minus * (em - et) / (self.tau * pm + 1))
        return z, zt, u

    def evaluate(self, t):
        """Modal (z, z_t, u) at times t >= T*, shape (len(t), n_modes) each."""
        from .residues import duhamel
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t_star - 1e-12):
            raise DomainError("the tail is only defined for t >= T*")
        z, zt, u = self._homogeneous(t)
        zp, ztp, up = duhamel(self.source, self.basis, self.poles, self.tau, self.t_star, t)
        return (np.real_if_close(z + zp, tol=1e6), np.real_if_close(zt + ztp, tol=1e6),
                np.real_if_close(u + up, tol=1e6))


def linear_tail(traj, coeff, r=None):
    """Closed-form continuation of ``traj`` after its switch-off time."""
    from .residues import poles as pole_pair
    if not coeff.constant_b0:
        raise UnsupportedConfigurationError("closed-form tail requires constant b0")
    if traj.solver.A_matrix is not None:
        raise UnsupportedConfigurationError("closed-form tail requires c0 equal to the basis c0")
    z0, z1, u0 = traj.terminal_data()
    b = coeff.b_bar
    pp = [pole_pair(lam, b, coeff.c) for lam in traj.basis.eigenvalues]
    p_plus = np.array([p.p_plus for p in pp])
    p_minus = np.array([p.p_minus for p in pp])
    d = p_plus - p_minus
    A_plus = (z1 - p_minus * z0) / d
    A_minus = (p_plus * z0 - z1) / d
    return LinearTail(t_star=traj.t_star, z0=z0, z1=z1, u0=u0, poles=pp, A_plus=A_plus,
                      A_minus=A_minus, tau=coeff.tau,
                      source=r if r is not None else traj.solver.source, basis=traj.basis)


# linearisation ----------------------------------------------------------

class LinearizedSolver(Solver):
    """RK4 on the system augmented by the exact derivative of the RHS.

    Integrating base and derivative together yields the derivative of the
    discrete solution map itself, so Taylor remainders are exactly second
    order in the perturbation size.
    """

    def __init__(self, basis, coeff, chi, direction, source=None, dt=1e-3, delta0=0.5):
        super().__init__(basis, coeff, chi, source, dt, delta0)
        g = basis.grid
        self.dkappa = g.evaluate(direction.dkappa)
        self.dc0 = g.evaluate(direction.dc0_sq)
        self.db0 = g.evaluate(direction.db0)
        self.d_nonlinear = bool(np.any(self.dkappa != 0))
        self.any_nl = self.nonlinear or self.d_nonlinear

    def rhs_pair(self, t, X, Y):
        tau, c2 = self.tau, self.c**2
        U, V, W = X
        Ul, Vl, Wl = Y
        Z, Zt = tau * V + U, tau * W + V
        Zl, Ztl = tau * Vl + Ul, tau * Wl + Vl
        r = self.source.modal(t, self.basis)
        acc = -W - c2 * self.A(Z) - self.B(Zt) + r
        acc_l = -Wl - c2 * self.A(Zl) - self.B(Ztl)
        if np.any(self.dc0 != 0):
            acc_l = acc_l - c2 * (self.P @ ((self.dc0 / self.basis.c0_sq) * (self.Phi @ (self.lam * Z))))
        if np.any(self.db0 != 0):
            acc_l = acc_l - self.P @ (self.db0 * (self.Phi @ Zt))
        if self.any_nl:
            G = self.G
            s, sdot = Z @ G @ Z, 2 * Z @ G @ Zt
            ds = 2 * Z @ G @ Zl
            dsdot = 2 * (Zl @ G @ Zt + Z @ G @ Ztl)
            chi0, chi1, chi2 = (float(f(s)) for f in (self.chi.value, self.chi.d1, self.chi.d2))
            sig, sigd = chi0, chi1 * sdot
            dsig = chi1 * ds
            dsigd = chi2 * ds * sdot + chi1 * dsdot
            if sig != 0 or sigd != 0 or dsig != 0 or dsigd != 0:
                Phi = self.Phi
                u, v, w = Phi @ U, Phi @ V, Phi @ W
                ul, vl, wl = Phi @ Ul, Phi @ Vl, Phi @ Wl
                base_nl = sig * u * w + (sigd * u + sig * v) * v
                if self.nonlinear:
                    acc = acc + self.P @ (2 * self.kappa * base_nl)
                    d_nl = (dsig * u * w + sig * (ul * w + u * wl)
                            + (dsigd * u + sigd * ul + dsig * v + sig * vl) * v
                            + (sigd * u + sig * v) * vl)
                    acc_l = acc_l + self.P @ (2 * self.kappa * d_nl)
                if self.d_nonlinear:
                    acc_l = acc_l + self.P @ (2 * self.dkappa * base_nl)
        return (V, W, acc / tau), (Vl, Wl, acc_l / tau)

    def simulate_pair(self, initial, T, sample_every=1):
        dt = self.dt
        X = [np.array(x, dtype=float) for x in initial]
        Y = [np.zeros_like(x) for x in X]
        t = 0.0
        base, lin, times = [], [], []

        def _rec(t, X, Y):
            times.append(t)
            base.append([x.copy() for x in X])
            lin.append([y.copy() for y in Y])

        _rec(t, X, Y)
        n_steps = int(round(T / dt))
        for i in range(1, n_steps + 1):
            k1 = self.rhs_pair(t, X, Y)
            X2 = [x + dt / 2 * k for x, k in zip(X, k1[0])]
            Y2 = [y + dt / 2 * k for y, k in zip(Y, k1[1])]
            k2 = self.rhs_pair(t + dt / 2, X2, Y2)
            X3 = [x + dt / 2 * k for x, k in zip(X, k2[0])]
            Y3 = [y + dt / 2 * k for y, k in zip(Y, k2[1])]
            k3 = self.rhs_pair(t + dt / 2, X3, Y3)
            X4 = [x + dt * k for x, k in zip(X, k3[0])]
            Y4 = [y + dt * k for y, k in zip(Y, k3[1])]
            k4 = self.rhs_pair(t + dt, X4, Y4)
            X = [x + dt / 6 * (a + 2 * b + 2 * c + d)
                 for x, a, b, c, d in zip(X, k1[0], k2[0], k3[0], k4[0])]
            Y = [y + dt / 6 * (a + 2 * b + 2 * c + d)
                 for y, a, b, c, d in zip(Y, k1[1], k2[1], k3[1], k4[1])]
            t = t + dt
            if not all(np.all(np.isfinite(a)) for a in X + Y):
                raise InstabilityError(t, dt)
            if i % sample_every == 0:
                _rec(t, X, Y)
        return np.array(times), np.array(base), np.array(lin)


@dataclass
class LinearizedTrajectory:
    times: np.ndarray
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    tau: float

    @property
    def Z(self):
        return self.tau * self.V + self.U

    @property
    def Zt(self):
        return self.tau * self.W + self.V


def solve_linearized(coeff, chi, base, direction, source=None, T=None, sample_every=None):
    """Derivative of the state in ``direction`` with zero initial data.

    ``base`` is a Trajectory from Solver.simulate with the same coefficients;
    its initial data, horizon, step and sampling are reused.
    """
    s = base.solver
    if s.coeff is not coeff and not (np.array_equal(s.coeff.kappa, coeff.kappa)
                                     and np.array_equal(s.coeff.c0_sq, coeff.c0_sq)
                                     and np.array_equal(s.coeff.b0, coeff.b0)):
        raise DomainError("base trajectory was computed with different coefficients")
    if base.times[0] != 0.0:
        raise DomainError("base trajectory must start at t = 0")
    if sample_every is None:
        sample_every = max(1, int(round((base.times[1] - base.times[0]) / s.dt)))
    T = base.times[-1] if T is None else T
    lin = LinearizedSolver(s.basis, coeff, chi, direction, source if source is not None else s.source,
                           dt=s.dt, delta0=s.delta0)
    initial = (base.U[0], base.V[0], base.W[0])
    times, _, Y = lin.simulate_pair(initial, T, sample_every)
    return LinearizedTrajectory(times, Y[:, 0], Y[:, 1], Y[:, 2], coeff.tau)


def energy_norm(U, V, W, tau, c, lam, G):
    """sup_t sqrt(E0[tau v_t + v](t)) of a modal history."""
    Z, Zt = tau * V + U, tau * W + V
    E = 0.5 * (np.einsum("ti,ij,tj->t", Zt, G, Zt) + c**2 * np.sum(lam * Z**2, axis=1))
    return float(np.sqrt(np.max(E)))


def lower_norm(U, V, W, tau, c, lam):
    """sup_t of the energy one derivative lower: H^-1 for z_t, L2 for z."""
    Z, Zt = tau * V + U, tau * W + V
    E = 0.5 * (np.sum(Zt**2 / lam, axis=1) + c**2 * np.sum(Z**2, axis=1))
    return float(np.sqrt(np.max(E)))


def taylor_remainder_check(coeff, chi, source, direction, amplitudes, basis, initial, T, dt,
                           sample_every=10, norm="energy"):
    """Taylor remainders |S(q + a d) - S(q) - a S'(q) d| for each amplitude.

    ``norm`` is "energy" or "lower" (see :func:`lower_norm`). Returns a list
    of (|a d|_inf, remainder) pairs.
    """
    if norm not in ("energy", "lower"):
        raise DomainError(f"unknown norm {norm!r}")
    solver = Solver(basis, coeff, chi, source, dt=dt)
    base = solver.simulate(initial, T, sample_every=sample_every, detect=False)
    lin = solve_linearized(coeff, chi, base, direction)
    G, lam = solver.G, solver.lam
    out = []
    for a in amplitudes:
        d = direction.scaled(a)
        if d.is_zero():
            out.append((0.0, 0.0))
            continue
        pert = coeff.perturbed(basis.grid.evaluate(d.dkappa), basis.grid.evaluate(d.dc0_sq),
                               basis.grid.evaluate(d.db0))
        tr = Solver(basis, pert, chi, source, dt=dt).simulate(initial, T, sample_every=sample_every,
                                                            detect=False)
        w = [getattr(tr, k) - getattr(base, k) - a * getattr(lin, k) for k in ("U", "V", "W")]
        r = (energy_norm(*w, coeff.tau, coeff.c, lam, G) if norm == "energy"
             else lower_norm(*w, coeff.tau, coeff.c, lam))
        out.append((d.sup_norm(), r))
    return out


def loglog_slope(pairs):
    x, y = np.log([p[0] for p in pairs]), np.log([p[1] for p in pairs])
    return float(np.polyfit(x, y, 1)[0])
