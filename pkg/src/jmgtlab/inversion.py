"""Observation operators, eigenspace maps and the residue-based inversion.

The forward operator maps coefficients to the f-weighted residue pairs of an
observed trace, expressed in eigenspace coordinates through B_lambda^+.  At
kappa = 0 its derivative is diagonal in the eigenbasis:

    first block_m  = rho_m nu_m <dkappa phi^2, phi_m>
    second block_m = rho_m nu_m <d2, phi_m>,    rho_m = 1 / (p+_m - p-_m),

with d2 = dc0^2 (-Lap phi) for the sound-speed variant and d2 = db0 phi for
the attenuation variant.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DomainError, InjectivityError, NotSwitchedOffError, OutsideLocalBallError,
                     ReconstructionDomainError, UnsupportedConfigurationError)
from .model import f_weights, nu_factors
from .residues import (ResidueSet, duhamel, poles as pole_pair, residue_from_trace,
                       source_laplace_tail, u_to_z_residues)
from .solver import Direction, Solver

log = logging.getLogger(__name__)

VARIANTS = ("sound-speed", "attenuation")
COND_MAX = 1e6


# observation ----------------------------------------------------------------

def _lagrange_weights(x, nodes):
    w = np.ones(len(nodes))
    for i, xi in enumerate(nodes):
        for j, xj in enumerate(nodes):
            if i != j:
                w[i] *= (x - xj) / (xi - xj)
    return w


def _interp_row_1d(x, h, n):
    """Cubic Lagrange weights on nodes 0..n+1 (boundary nodes carry zero values)."""
    i = int(np.floor(x / h))
    i0 = min(max(i - 1, 0), n + 1 - 3)
    idx = np.arange(i0, i0 + 4)
    w = _lagrange_weights(x, idx * h)
    row = np.zeros(n)
    for k, wk in zip(idx, w):
        if 1 <= k <= n:
            row[k - 1] += wk
    return row


def interpolation_row(grid, point):
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.size != grid.dim:
        raise DomainError(f"point {point} does not have {grid.dim} coordinates")
    for x, L in zip(point, grid.extents):
        if not (0.0 <= x <= L):
            raise DomainError(f"observation location {tuple(point)} lies outside the domain")
    rows = [_interp_row_1d(x, h, n) for x, h, n in zip(point, grid.spacing, grid.points)]
    return rows[0] if grid.dim == 1 else np.kron(rows[0], rows[1])


@dataclass(frozen=True, eq=False)
class ObservationOp:
    """Linear map from grid fields to sensor vectors, stored as a matrix.

    ``kind`` is ``points`` (cubic interpolation), ``averages`` (weighted
    quadrature against fields eta_i) or ``trace`` (points along an interior
    curve scaled by the square roots of their quadrature weights).
    """

    kind: str
    matrix: np.ndarray
    locations: np.ndarray | None = None

    @property
    def n_obs(self):
        return self.matrix.shape[0]

    @classmethod
    def points(cls, grid, locations):
        loc = np.atleast_2d(np.asarray(locations, dtype=float))
        if grid.dim == 1 and loc.shape[0] == 1 and loc.shape[1] > 1:
            loc = loc.T
        M = np.array([interpolation_row(grid, p) for p in loc])
        return cls("points", M, loc)

    @classmethod
    def averages(cls, grid, weights):
        rows = [grid.cell * grid.evaluate(eta) for eta in weights]
        return cls("averages", np.array(rows))

    @classmethod
    def trace(cls, grid, locations, quad_weights):
        op = cls.points(grid, locations)
        qw = np.asarray(quad_weights, dtype=float)
        if qw.shape != (op.n_obs,) or np.any(qw <= 0):
            raise DomainError("trace quadrature weights must be positive, one per point")
        return cls("trace", np.sqrt(qw)[:, None] * op.matrix, op.locations)

    @classmethod
    def interior_curve(cls, grid, offset=0.1, per_side=8):
        """Trace on the boundary of the rectangle shrunk by ``offset`` per axis fraction."""
        if grid.dim == 1:
            L = grid.extents[0]
            return cls.trace(grid, [[offset * L], [(1 - offset) * L]], [1.0, 1.0])
        Lx, Ly = grid.extents
        x0, x1, y0, y1 = offset * Lx, (1 - offset) * Lx, offset * Ly, (1 - offset) * Ly
        s = (np.arange(per_side) + 0.5) / per_side
        pts, wts = [], []
        for a, b, length in (((x0, y0), (x1, y0), x1 - x0), ((x1, y0), (x1, y1), y1 - y0),
                             ((x1, y1), (x0, y1), x1 - x0), ((x0, y1), (x0, y0), y1 - y0)):
            for si in s:
                pts.append((a[0] + si * (b[0] - a[0]), a[1] + si * (b[1] - a[1])))
                wts.append(length / per_side)
        return cls.trace(grid, pts, wts)

    def apply(self, field):
        return self.matrix @ np.asarray(field)

    def modal(self, basis):
        """Sensor response of every eigenfunction, shape (n_obs, n_modes)."""
        return self.matrix @ basis.vectors

    def to_dict(self):
        d = {"kind": self.kind, "n_obs": self.n_obs}
        if self.locations is not None:
            d["locations"] = self.locations.tolist()
        return d


def observe(field, op):
    return op.apply(field)


@dataclass(frozen=True, eq=False)
class EigenspaceMap:
    lam: float
    group: int
    modes: tuple
    matrix: np.ndarray
    pinv: np.ndarray
    condition: float
    singular_values: np.ndarray

    def coordinates(self, y):
        """B^+ applied to a sensor vector (or stacked vectors in the last axis)."""
        return self.pinv @ y


def build_Blambda(op, basis, n_groups=None, raise_errors=True, rank_rtol=1e-8, cond_max=COND_MAX):
    """Eigenspace maps B_lambda for the first ``n_groups`` eigenvalue groups.

    A group fails when its columns O phi_k are numerically dependent (or the
    condition number exceeds ``cond_max``); failures raise InjectivityError
    naming every failed eigenvalue unless ``raise_errors`` is False.
    """
    n_groups = len(basis.groups) if n_groups is None else int(n_groups)
    if n_groups > len(basis.groups):
        raise DomainError(f"requested {n_groups} groups, basis has {len(basis.groups)}")
    OP = op.modal(basis)
    scale = float(np.max(np.linalg.norm(OP, axis=0)))
    maps, failed = [], []
    for gi, g in enumerate(basis.groups[:n_groups]):
        Bm = OP[:, list(g)]
        sv = np.linalg.svd(Bm, compute_uv=False)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        ok = Bm.shape[0] >= Bm.shape[1] and sv[-1] > rank_rtol * scale and cond <= cond_max
        if not ok:
            failed.append((gi, float(basis.eigenvalues[g[0]])))
        maps.append(EigenspaceMap(lam=float(basis.eigenvalues[list(g)].mean()), group=gi,
                                  modes=tuple(g), matrix=Bm, pinv=np.linalg.pinv(Bm),
                                  condition=cond, singular_values=sv))
    if failed and raise_errors:
        names = ", ".join(f"group {gi} (lambda={lam:.6g})" for gi, lam in failed)
        raise InjectivityError(f"observation cannot separate eigenspaces: {names}", failed=failed)
    return maps


# image space ------------------------------------------------------------------

@dataclass
class ResidueImage:
    """Element of the image space: two coefficient vectors per eigenvalue group."""

    lam: np.ndarray
    h1: list
    h2: list
    meta: dict = field(default_factory=dict)

    def __sub__(self, other):
        return ResidueImage(self.lam, [a - b for a, b in zip(self.h1, other.h1)],
                            [a - b for a, b in zip(self.h2, other.h2)])

    def __add__(self, other):
        return ResidueImage(self.lam, [a + b for a, b in zip(self.h1, other.h1)],
                            [a + b for a, b in zip(self.h2, other.h2)])

    def scaled(self, a):
        return ResidueImage(self.lam, [a * x for x in self.h1], [a * x for x in self.h2])

    def first_only(self):
        return ResidueImage(self.lam, list(self.h1), [np.zeros_like(x) for x in self.h2])

    def vector(self):
        return np.concatenate([np.concatenate(self.h1), np.concatenate(self.h2)])

    def to_dict(self):
        return {"lambda": self.lam.tolist(),
                "h1": [[[complex(x).real, complex(x).imag] for x in h] for h in self.h1],
                "h2": [[[complex(x).real, complex(x).imag] for x in h] for h in self.h2]}


def image_norm(img):
    """sqrt(sum_m lam_m^2 (|h1_m|^2 + |h2_m|^2))."""
    tot = sum(l**2 * (np.sum(np.abs(a) ** 2) + np.sum(np.abs(b) ** 2))
              for l, a, b in zip(img.lam, img.h1, img.h2))
    return float(np.sqrt(tot))


# experiment -------------------------------------------------------------------

@dataclass
class Experiment:
    """Background state, excitation and observation shared by the inversion steps.

    Parameters
    ----------
    basis : EigenBasis
        Background eigensystem (c0 of the reference medium).
    coeff : CoefficientField
        Background coefficients with kappa = 0 and constant b0.
    chi, phi, psi, source : cutoff, spatial and time profiles, and the excitation.
    op : ObservationOp
    M : int
        Number of eigenvalue groups used for reconstruction.
    variant : {"sound-speed", "attenuation"}
    window : float
        Length of the fitting window after the switch-off time.
    """

    basis: object
    coeff: object
    chi: object
    phi: object
    psi: object
    source: object
    op: ObservationOp
    M: int
    variant: str = "sound-speed"
    dt: float = 1e-3
    sample_every: int = 10
    window: float = 16.0
    t_min: float = 0.0
    s: float = 1.0
    f2_form: str = "exact"
    shift_terms: bool = True
    maps: list = field(init=False, repr=False)
    group_poles: list = field(init=False, repr=False)
    weights: object = field(init=False, repr=False)
    nu: object = field(init=False, repr=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown variant {self.variant!r}")
        if not self.coeff.constant_b0:
            raise UnsupportedConfigurationError("the inversion requires a constant background b0")
        b, c = self.coeff.b_bar, self.coeff.c
        self.group_poles = [pole_pair(l, b, c) for l in self.basis.group_eigenvalues]
        if self.M > len(self.basis.groups):
            raise DomainError(f"M={self.M} exceeds the {len(self.basis.groups)} retained groups")
        bad = [i for i, p in enumerate(self.group_poles[: self.M]) if not p.oscillatory]
        if bad:
            raise DomainError(f"groups {bad} are overdamped; reduce M or b0")
        self.maps = build_Blambda(self.op, self.basis, self.M)
        self.weights = f_weights(self.psi, self.chi, self.phi, self.coeff.tau, self.variant,
                                 self.basis, self.f2_form)
        self.nu = nu_factors(self.weights.f1_hat, self.weights.f2_hat, self.group_poles[: self.M])
        if self.nu.flagged.any():
            warnings.warn(f"nu vanishes for groups {np.flatnonzero(self.nu.flagged).tolist()}; "
                          "they are excluded", RuntimeWarning, stacklevel=2)

    @property
    def factors(self):
        """rho_m nu_m per retained group (real for oscillatory modes)."""
        rho = np.array([1.0 / (p.p_plus - p.p_minus) for p in self.group_poles[: self.M]])
        return rho * self.nu.values

    @property
    def lam(self):
        return self.basis.group_eigenvalues[: self.M]

    @property
    def second_profile(self):
        return self.phi.neg_laplacian if self.variant == "sound-speed" else self.phi.values

    def modes(self):
        return self.basis.modes_up_to_group(self.M)

    def direction(self, K, C=None):
        """Grid direction whose X-coordinates on the first M groups are (K, C).

        dkappa phi^2 = sum_m K_m phi_m and d2 * g = sum_m C_m phi_m exactly on
        every node, with g = -Lap phi or phi.
        """
        Phi = self.basis.vectors[:, self.modes()]
        phi2 = self.phi.values**2
        if np.any(np.abs(phi2) < 1e-14 * np.abs(phi2).max()):
            raise ReconstructionDomainError("phi vanishes on an interior node")
        dk = Phi @ np.asarray(K, dtype=float) / phi2
        d2 = 0.0
        if C is not None:
            d2 = Phi @ np.asarray(C, dtype=float) / self.second_profile
        if self.variant == "sound-speed":
            return Direction(dkappa=dk, dc0_sq=d2)
        return Direction(dkappa=dk, db0=d2)

    def coordinates(self, direction):
        """X-coordinates (K, C) of a grid direction on the first M groups."""
        g = self.basis.grid
        dk = g.evaluate(direction.dkappa)
        d2 = g.evaluate(direction.dc0_sq if self.variant == "sound-speed" else direction.db0)
        other = direction.db0 if self.variant == "sound-speed" else direction.dc0_sq
        if np.any(np.asarray(other) != 0):
            raise DomainError(f"direction perturbs a coefficient outside the {self.variant} variant")
        idx = self.modes()
        K = self.basis.to_modal(dk * self.phi.values**2)[idx]
        C = self.basis.to_modal(d2 * self.second_profile)[idx]
        return K, C

    def coeff_for(self, direction):
        g = self.basis.grid
        return self.coeff.perturbed(g.evaluate(direction.dkappa), g.evaluate(direction.dc0_sq),
                                    g.evaluate(direction.db0))

    def _split(self, values):
        out, i = [], 0
        for mp in self.maps:
            k = len(mp.modes)
            out.append(np.asarray(values[i:i + k]))
            i += k
        return out

    def _join(self, blocks):
        return np.concatenate([np.atleast_1d(b) for b in blocks])


def observed_residues(t, U, basis, op, source, tau, b_bar, group_poles, extra_terms=(),
                      shift_terms=False):
    """z-residues per eigenvalue group of the observed trace of modal u samples ``U`` at ``t``.

    ``t[0]`` must not precede the switch-off time.  The particular response
    to ``source`` is removed before fitting and its residue added back
    exactly; a -1/tau nuisance pole absorbs the relaxation mode of u.
    """
    T0 = float(t[0])
    mode_poles = [pole_pair(l, b_bar, basis.c) for l in basis.eigenvalues]
    OP = op.modal(basis)
    _, _, up = duhamel(source, basis, mode_poles, tau, T0, t)
    g = (U - up) @ OP.T
    fit = residue_from_trace(t, g, group_poles, extra_poles=[-1.0 / tau], extra_terms=extra_terms,
                             shift_terms=shift_terms)
    pp = np.array([p.p_plus for p in group_poles])
    pm = np.array([p.p_minus for p in group_poles])
    Rp = u_to_z_residues(fit.r_plus, pp, tau)
    Rm = u_to_z_residues(fit.r_minus, pm, tau)
    rh = source_laplace_tail(source, basis, mode_poles, T0)
    mp = np.array([p.p_plus for p in mode_poles])
    mm = np.array([p.p_minus for p in mode_poles])
    part_p, part_m = rh[:, 0] / (mp - mm), rh[:, 1] / (mm - mp)
    for gi, grp in enumerate(basis.groups):
        idx = list(grp)
        Rp[gi] = Rp[gi] + OP[:, idx] @ part_p[idx]
        Rm[gi] = Rm[gi] + OP[:, idx] @ part_m[idx]
    rset = ResidueSet(list(group_poles), Rp, Rm, kind="z", residual=fit.residual,
                      window=(T0, float(t[-1])), labels=list(range(len(group_poles))))
    return rset, fit


def observed_closed_form(modal_set, basis, op):
    """Push per-mode closed-form residues through the observation, summing within groups."""
    OP = op.modal(basis)
    rp = np.array([OP[:, list(g)] @ modal_set.r_plus[list(g)] for g in basis.groups])
    rm = np.array([OP[:, list(g)] @ modal_set.r_minus[list(g)] for g in basis.groups])
    pairs = [modal_set.pole_pairs[g[0]] for g in basis.groups]
    return ResidueSet(pairs, rp, rm, kind=modal_set.kind, residual=modal_set.residual,
                      window=modal_set.window, labels=list(range(len(pairs))))


def forward_residues(coeff, chi, pack, op=None, M=None, return_details=False):
    """Simulate, observe the u-trace and map its residues into image space.

    The particular response to the source after the switch-off time is
    removed before fitting and its residue added back exactly.
    """
    exp = pack
    op = exp.op if op is None else op
    M = exp.M if M is None else M
    basis, tau = exp.basis, coeff.tau
    solver = Solver(basis, coeff, chi, exp.source, dt=exp.dt)
    n = basis.n_modes
    zero = np.zeros(n)
    horizon = max(exp.t_min, 6.0 / exp.coeff.b_bar) + exp.window
    traj = solver.simulate((zero, zero, zero), horizon, sample_every=exp.sample_every,
                           detect=True, extend_to=4 * horizon)
    if traj.t_star is None:
        raise NotSwitchedOffError("forward run did not switch off; reduce the amplitude")
    T0 = max(traj.t_star, exp.t_min)
    k0 = traj.index_at(T0) if T0 > traj.times[0] else 0
    T1 = T0 + exp.window
    if traj.times[-1] < T1 - 1e-9:
        extra = solver.simulate((traj.U[-1], traj.V[-1], traj.W[-1]), T1, sample_every=exp.sample_every,
                                t0=traj.times[-1], detect=False)
        times = np.concatenate([traj.times, extra.times[1:]])
        U = np.vstack([traj.U, extra.U[1:]])
    else:
        times, U = traj.times, traj.U
    sel = slice(k0, int(np.searchsorted(times, T1 + 1e-9)))
    t, U = times[sel], U[sel]

    psi_terms = [(-exp.psi.a, k) for k in range(exp.psi.q + 1)]
    rset, fit = observed_residues(t, U, basis, op, exp.source, tau, exp.coeff.b_bar, exp.group_poles,
                                  extra_terms=psi_terms, shift_terms=exp.shift_terms)
    first, second = rset.combinations(exp.weights.f1_hat, exp.weights.f2_hat)
    h1 = [exp.maps[m].coordinates(first[m]) for m in range(M)]
    h2 = [exp.maps[m].coordinates(second[m]) for m in range(M)]
    img = ResidueImage(np.asarray(exp.lam[:M]), h1, h2,
                       meta={"t_star": traj.t_star, "fit_residual": fit.residual,
                             "fit_condition": fit.condition, "window": rset.window})
    if return_details:
        return img, rset, traj
    return img


def linearized_apply(pack, direction=None, K=None, C=None):
    """Derivative of the forward operator at kappa = 0 applied to a direction.

    Pass either a grid ``direction`` or its X-coordinates ``K`` (and ``C``).
    """
    exp = pack
    if direction is not None:
        K, C = exp.coordinates(direction)
    K = np.zeros(exp.modes().size) if K is None else np.asarray(K)
    C = np.zeros_like(K) if C is None else np.asarray(C)
    f = exp.factors
    keep = ~exp.nu.flagged
    h1 = [f[m] * b if keep[m] else 0 * b for m, b in enumerate(exp._split(K))]
    h2 = [f[m] * b if keep[m] else 0 * b for m, b in enumerate(exp._split(C))]
    return ResidueImage(np.asarray(exp.lam), h1, h2)


@dataclass
class ReconstructionResult:
    variant: str
    K: np.ndarray
    C: np.ndarray
    dkappa: np.ndarray
    second: np.ndarray
    c_nu: float
    amplification: np.ndarray
    conditions: np.ndarray
    nu: np.ndarray
    imag_residual: float
    mask: np.ndarray

    @property
    def second_name(self):
        return "dc0_sq" if self.variant == "sound-speed" else "db0"

    def diagnostics(self):
        return {"variant": self.variant, "c_nu": self.c_nu,
                "amplification": self.amplification.tolist(),
                "B_condition": self.conditions.tolist(),
                "nu": [[complex(v).real, complex(v).imag] for v in self.nu],
                "imag_residual": self.imag_residual,
                "K": self.K.tolist(), "C": self.C.tolist()}

    def save(self, out_dir, grid):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        xyz = grid.coordinates()
        cols = [f"x{i}" for i in range(grid.dim)] + ["dkappa", self.second_name]
        data = np.column_stack([xyz, self.dkappa, self.second])
        np.savetxt(out / "reconstruction.csv", data, delimiter=",", header=",".join(cols),
                   comments="", fmt="%.17g")
        (out / "reconstruction.json").write_text(json.dumps(self.diagnostics(), indent=1))


def c_nu_value(exp, s=None):
    """min_m |nu_m|^2 lam_m^(1-s) over the retained groups."""
    s = exp.s if s is None else s
    nu = np.abs(exp.nu.values) ** 2
    return float(np.min(nu * exp.lam ** (1 - s)))


def reconstruct(img, pack, M=None, variant=None):
    """Invert the diagonal derivative and synthesise fields on the reconstruction subdomain."""
    exp = pack
    if variant is not None and variant != exp.variant:
        raise DomainError("variant does not match the experiment")
    M = exp.M if M is None else M
    if M > exp.M:
        raise DomainError(f"M={M} exceeds the experiment's {exp.M} groups")
    f = exp.factors[:M]
    keep = ~exp.nu.flagged[:M]
    # real least squares for the real unknowns: Re(conj(f) h) / |f|^2
    Ks, Cs, imag = [], [], 0.0
    for m in range(M):
        d = f[m]
        for h, dst in ((img.h1[m], Ks), (img.h2[m], Cs)):
            h = np.asarray(h, dtype=complex)
            if keep[m]:
                dst.append(np.real(np.conj(d) * h) / abs(d) ** 2)
                imag = max(imag, float(np.max(np.abs(np.imag(np.conj(d) * h)) / abs(d) ** 2, initial=0)))
            else:
                dst.append(np.zeros(h.shape))
    K, C = exp._join(Ks), exp._join(Cs)
    idx = exp.basis.modes_up_to_group(M)
    Phi = exp.basis.vectors[:, idx]
    mask = exp.phi.rec_mask
    phi2 = exp.phi.values**2
    g2 = exp.second_profile
    floor = 1e-12
    if np.min(np.abs(phi2[mask])) < floor or np.min(np.abs(g2[mask])) < floor:
        raise ReconstructionDomainError("division field falls below threshold on the reconstruction subdomain")
    dk = np.full(exp.basis.grid.size, np.nan)
    d2 = np.full(exp.basis.grid.size, np.nan)
    dk[mask] = (Phi @ K)[mask] / phi2[mask]
    d2[mask] = (Phi @ C)[mask] / g2[mask]
    amp = np.where(keep, 1.0 / np.abs(f), np.inf)
    return ReconstructionResult(variant=exp.variant, K=K, C=C, dkappa=dk, second=d2,
                                c_nu=c_nu_value(exp), amplification=amp,
                                conditions=np.array([mp.condition for mp in exp.maps[:M]]),
                                nu=exp.nu.values[:M], imag_residual=imag, mask=mask)


def lower_bound(exp, K, C, s=None):
    """Right-hand side (c_nu / (4 c^2)) sum_m lam_m^s (|K_m|^2 + |C_m|^2)."""
    s = exp.s if s is None else s
    lam_modes = exp.basis.eigenvalues[exp.modes()]
    total = np.sum(lam_modes**s * (np.abs(K) ** 2 + np.abs(C) ** 2))
    return c_nu_value(exp, s) / (4 * exp.coeff.c**2) * float(total)


@dataclass
class NewtonResult:
    x: np.ndarray
    history: list
    residuals: list
    converged: bool

    @property
    def iterations(self):
        return len(self.history) - 1


def newton_kappa(y_obs, pack, M=None, iterations=10, tol=1e-14, rtol=1e-9, forward=None):
    """Frozen Newton iteration for kappa in X1-coordinates (modal coefficients of kappa phi^2).

    ``forward`` maps X1-coordinates to a ResidueImage; the default runs
    forward_residues on kappa = sum_m x_m phi_m / phi^2.  Only the first
    block is matched, since kappa alone is unknown.  Iteration stops once
    the residual falls below ``max(tol, rtol * |y_obs|)``.
    """
    exp = pack
    M = exp.M if M is None else M
    n_coord = exp.basis.modes_up_to_group(M).size
    if forward is None:
        def forward(x):
            K = np.zeros(exp.modes().size)
            K[:n_coord] = x
            return forward_residues(exp.coeff_for(exp.direction(K)), exp.chi, exp)
    f = exp.factors
    y1 = [np.asarray(h) for h in y_obs.h1[:M]]
    target = max(tol, rtol * image_norm(ResidueImage(np.asarray(exp.lam[:M]), y1,
                                                     [np.zeros_like(a) for a in y1])))
    x = np.zeros(n_coord)
    history, residuals = [x.copy()], []
    growth = 0
    for it in range(iterations + 1):
        img = forward(x)
        r = ResidueImage(np.asarray(exp.lam[:M]), [a - b for a, b in zip(y1, img.h1[:M])],
                         [np.zeros_like(a) for a in y1])
        res = image_norm(r)
        residuals.append(res)
        if res < target:
            return NewtonResult(x, history, residuals, True)
        if len(residuals) > 1 and res > residuals[-2]:
            growth += 1
            if growth >= 3:
                raise OutsideLocalBallError("frozen Newton residual grew on three consecutive steps",
                                            history=history)
        else:
            growth = 0
        if it == iterations:
            break
        step = np.concatenate([np.real(np.conj(f[m]) * r.h1[m]) / abs(f[m]) ** 2 for m in range(M)])
        x = x + step
        history.append(x.copy())
    return NewtonResult(x, history, residuals, False)
