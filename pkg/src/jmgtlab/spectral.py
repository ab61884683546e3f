"""Dirichlet eigensystem of A = -(c0^2/c^2) Laplacian on tensor grids.

The discrete operator uses the second-order five-point (three-point in 1-D)
stencil on interior nodes of a uniform grid.  Eigenpairs solve the symmetric
generalized problem

    (-Lap_h) phi = lam * w * phi,      w = c^2 / c0^2,

so they are orthonormal in the weighted product <u, v> = sum(cell * w * u * v),
which is the trapezoidal rule for functions vanishing on the boundary.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import DomainError, EigenSolverError

GROUP_RTOL = 1e-8
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class Grid:
    """Uniform grid of interior nodes on an interval or rectangle.

    ``points`` counts interior nodes per axis, so the spacing is
    ``extent / (points + 1)``.
    """

    extents: tuple
    points: tuple

    def __post_init__(self):
        extents = tuple(float(e) for e in np.atleast_1d(self.extents))
        points = tuple(int(p) for p in np.atleast_1d(self.points))
        if len(points) == 1 and len(extents) > 1:
            points = points * len(extents)
        if len(extents) not in (1, 2) or len(points) != len(extents):
            raise DomainError("grid must be 1-D or 2-D with one point count per axis")
        if any(e <= 0 for e in extents):
            raise DomainError(f"grid extents must be positive, got {extents}")
        if any(p < 8 for p in points):
            raise DomainError(f"at least 8 points per axis are required, got {points}")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "points", points)

    @property
    def dim(self):
        return len(self.extents)

    @property
    def spacing(self):
        return tuple(L / (n + 1) for L, n in zip(self.extents, self.points))

    @property
    def cell(self):
        return float(np.prod(self.spacing))

    @property
    def size(self):
        return int(np.prod(self.points))

    @property
    def shape(self):
        return self.points

    def axes(self):
        return [h * np.arange(1, n + 1) for h, n in zip(self.spacing, self.points)]

    def coordinates(self):
        """Node coordinates, shape (size, dim), x-index major."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def neg_laplacian(self):
        """Sparse matrix of -Lap_h with homogeneous Dirichlet conditions."""
        ops = []
        for h, n in zip(self.spacing, self.points):
            ops.append(sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)],
                                [-1, 0, 1]) / h**2)
        if self.dim == 1:
            return ops[0].tocsr()
        nx, ny = self.points
        return (sp.kron(ops[0], sp.identity(ny)) + sp.kron(sp.identity(nx), ops[1])).tocsr()

    def evaluate(self, f):
        """Sample a scalar, array or callable ``f(*coords)`` on the nodes."""
        if callable(f):
            xyz = self.coordinates()
            values = np.asarray(f(*xyz.T), dtype=float)
            return np.broadcast_to(values, (self.size,)).copy()
        values = np.asarray(f, dtype=float)
        if values.ndim == 0:
            return np.full(self.size, float(values))
        values = values.reshape(-1)
        if values.size != self.size:
            raise DomainError(f"field has {values.size} values, grid has {self.size} nodes")
        return values

    def to_dict(self):
        return {"extents": list(self.extents), "points": list(self.points)}


def _frozen(a):
    a = np.array(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class EigenBasis:
    grid: Grid
    c: float
    c0_sq: np.ndarray
    eigenvalues: np.ndarray
    vectors: np.ndarray
    groups: tuple = field(repr=False)

    @property
    def n_modes(self):
        return self.eigenvalues.size

    @property
    def weight(self):
        return self.c**2 / self.c0_sq

    @property
    def quad_weights(self):
        """Weighted quadrature: cell * c^2 / c0^2 at every node."""
        return self.grid.cell * self.weight

    @property
    def group_eigenvalues(self):
        return np.array([self.eigenvalues[list(g)].mean() for g in self.groups])

    @property
    def multiplicities(self):
        return [len(g) for g in self.groups]

    def group_of(self, mode):
        for i, g in enumerate(self.groups):
            if mode in g:
                return i
        raise DomainError(f"mode {mode} not in basis")

    def modes_up_to_group(self, n_groups):
        """Mode indices of the first ``n_groups`` eigenvalue groups."""
        return np.concatenate([np.asarray(g) for g in self.groups[:n_groups]])

    # transforms ---------------------------------------------------------
    def to_modal(self, v):
        v = np.asarray(v)
        if v.shape[0] != self.grid.size:
            raise DomainError(f"field has {v.shape[0]} values, grid has {self.grid.size} nodes")
        w = self.quad_weights if v.ndim == 1 else self.quad_weights[:, None]
        return self.vectors.T @ (w * v)

    def to_grid(self, m):
        m = np.asarray(m)
        if m.shape[0] != self.n_modes:
            raise DomainError(f"modal vector has length {m.shape[0]}, basis has {self.n_modes}")
        return self.vectors @ m

    def inner(self, u, v):
        """Weighted inner product of two grid fields."""
        return float(np.sum(self.quad_weights * u * v))

    def l2_inner(self, u, v):
        """Unweighted L2 product of two grid fields."""
        return float(self.grid.cell * np.sum(u * v))

    def unweighted_gram(self):
        """Matrix G with |Phi m|_{L2}^2 = m^T G m."""
        return self.grid.cell * (self.vectors.T @ self.vectors)

    def neg_laplacian_of(self, m):
        """Grid values of -Lap_h applied to the field with modal coefficients m."""
        return self.weight * (self.vectors @ (self.eigenvalues * m))

    def apply_A(self, v):
        """Discrete A = (c0^2 / c^2)(-Lap_h) applied to a grid field."""
        return (self.c0_sq / self.c**2) * (self.grid.neg_laplacian() @ v)

    # export ---------------------------------------------------------------
    def to_dict(self):
        return {
            "grid": self.grid.to_dict(),
            "c": self.c,
            "c0_sq": self.c0_sq.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "groups": [list(map(int, g)) for g in self.groups],
            "vectors": self.vectors.T.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        grid = Grid(tuple(d["grid"]["extents"]), tuple(d["grid"]["points"]))
        lam = np.asarray(d["eigenvalues"], dtype=float)
        vec = np.asarray(d["vectors"], dtype=float).reshape(lam.size, grid.size).T
        return cls(grid=grid, c=float(d["c"]), c0_sq=_frozen(d["c0_sq"]),
                   eigenvalues=_frozen(lam), vectors=_frozen(vec),
                   groups=tuple(tuple(g) for g in d["groups"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def group_eigenvalues(lam, rtol=GROUP_RTOL):
    """Split sorted eigenvalues into clusters with relative gap below ``rtol``."""
    groups, current = [], [0]
    for i in range(1, len(lam)):
        if abs(lam[i] - lam[current[0]]) <= rtol * abs(lam[i]):
            current.append(i)
        else:
            groups.append(tuple(current))
            current = [i]
    groups.append(tuple(current))
    return groups


def _fix_signs(vectors):
    """Make the first non-negligible entry of every eigenvector positive."""
    for k in range(vectors.shape[1]):
        v = vectors[:, k]
        idx = np.flatnonzero(np.abs(v) > 1e-8 * np.abs(v).max())[0]
        if v[idx] < 0:
            vectors[:, k] = -v
    return vectors


def build_basis(grid, c0_sq, c, n_modes):
    """Leading eigenpairs of A with Dirichlet conditions.

    Parameters
    ----------
    grid : Grid
    c0_sq : float, array or callable
        Squared sound speed on the nodes; must be strictly positive.
    c : float
        Constant reference wave speed.
    n_modes : int
        Number of (j, k) pairs to retain.  If the cut would split a
        multiple eigenvalue the whole group is kept.

    Returns
    -------
    EigenBasis
    """
    c0_sq = grid.evaluate(c0_sq)
    if not np.all(c0_sq > 0) or not np.all(np.isfinite(c0_sq)):
        raise DomainError("c0_sq must be strictly positive on all nodes")
    if c <= 0:
        raise DomainError("reference speed c must be positive")
    total = grid.size
    n_modes = int(n_modes)
    if not 1 <= n_modes <= total:
        raise DomainError(f"n_modes must lie in [1, {total}], got {n_modes}")

    cell = grid.cell
    weight = c**2 / c0_sq
    K = cell * grid.neg_laplacian().toarray()
    M = cell * weight

    n_try = n_modes
    while True:
        n_try = min(total, n_try + 8)
        lam, vec = la.eigh(K, np.diag(M), subset_by_index=[0, n_try - 1])
        groups = group_eigenvalues(lam)
        kept, count = [], 0
        for g in groups:
            if count >= n_modes:
                break
            kept.append(g)
            count += len(g)
        # the last kept group must be complete within the computed set
        if kept[-1][-1] < n_try - 1 or n_try == total:
            break

    lam, vec = lam[:count], _fix_signs(vec[:, :count].copy())
    A_h = (c0_sq / c**2)[:, None] * (grid.neg_laplacian() @ vec)
    resid = np.linalg.norm(A_h - vec * lam, axis=0) / (lam * np.linalg.norm(vec, axis=0))
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0) or resid.max() > RESIDUAL_TOL:
        raise EigenSolverError(f"eigensolver residual {resid.max():.3e} exceeds {RESIDUAL_TOL}",
                               residual=resid)
    return EigenBasis(grid=grid, c=float(c), c0_sq=_frozen(c0_sq), eigenvalues=_frozen(lam),
                      vectors=_frozen(vec), groups=tuple(kept))


def to_modal(v, basis):
    return basis.to_modal(v)


def to_grid(m, basis):
    return basis.to_grid(m)


def sobolev_norm(m, s, basis):
    """(sum_j lam_j^s sum_k |m_jk|^2)^(1/2) over the retained modes."""
    if not -2 <= s <= 4:
        raise DomainError(f"Sobolev index must lie in [-2, 4], got {s}")
    m = np.asarray(m)
    if m.shape[0] != basis.n_modes:
        raise DomainError("modal vector length does not match basis")
    return float(np.sqrt(np.sum(basis.eigenvalues**s * np.abs(m) ** 2)))
