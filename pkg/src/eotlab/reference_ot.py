"""Unregularized reference: W2^2, Brenier map and Kantorovich potentials.

In one dimension the monotone (quantile) coupling is exact and authoritative.
In higher dimension the discrete Kantorovich LP is solved with HiGHS and the
duals are converted to convex potentials ``u0 = |x|^2/2 - phi0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import _kernel
from .detachment import legendre_transform
from .errors import (
    CapacityError,
    InsufficientDataError,
    InternalError,
    MethodError,
    ResolutionError,
)
from .marginals import ConvexDomain, DensitySpec, DiscreteMarginal
from .sinkhorn import PotentialField

LP_MAX_NODES = 4096


@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    w2sq: float
    map_values: np.ndarray
    u0: PotentialField
    v0: PotentialField
    method: str
    plan_rows: np.ndarray
    plan_cols: np.ndarray
    plan_mass: np.ndarray
    duality_gap: float = 0.0

    @property
    def mu(self) -> DiscreteMarginal:
        return self.u0.marginal

    @property
    def nu(self) -> DiscreteMarginal:
        return self.v0.marginal

    def dense_plan(self) -> np.ndarray:
        P = np.zeros((self.mu.size, self.nu.size))
        np.add.at(P, (self.plan_rows, self.plan_cols), self.plan_mass)
        return P

    def dual_slack(self) -> np.ndarray:
        """u0(x_i) + v0(y_j) - <x_i, y_j> on all node pairs."""
        return self.u0.values[:, None] + self.v0.values[None, :] - self.mu.nodes @ self.nu.nodes.T

    def map_field(self):
        """The sampled transport map as a callable vector field."""
        return _VectorField(self.mu.nodes, self.map_values)


class _VectorField:
    """Node lookup with multilinear interpolation, one component at a time."""

    def __init__(self, nodes, values):
        self.nodes = nodes
        self.components = [PotentialField(nodes, values[:, k], 0.0, "generic")
                           for k in range(values.shape[1])]

    def __call__(self, points):
        p = np.asarray(points, dtype=np.float64).reshape(-1, self.nodes.shape[1])
        return np.stack([np.atleast_1d(c(p)) for c in self.components], axis=1)


def solve_quantile_1d(mu: DiscreteMarginal, nu: DiscreteMarginal) -> ReferenceSolution:
    """Monotone rearrangement between the discrete CDFs of two 1D marginals."""
    if mu.dimension != 1 or nu.dimension != 1:
        raise MethodError("the quantile coupling is only defined in dimension 1")
    x, y = mu.nodes[:, 0], nu.nodes[:, 0]
    if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
        raise MethodError("1D nodes must be strictly increasing")
    a, b = mu.weights, nu.weights
    A, B = np.cumsum(a), np.cumsum(b)
    A[-1] = B[-1] = 1.0
    cuts = np.unique(np.concatenate([[0.0], A, B]))
    # merge breakpoints that differ only by summation rounding
    cuts = cuts[np.concatenate([[True], np.diff(cuts) > 1e-13])]
    cuts[-1] = 1.0
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    rows = np.minimum(np.searchsorted(A, mids), x.size - 1)
    cols = np.minimum(np.searchsorted(B, mids), y.size - 1)
    mass = np.diff(cuts)

    w2sq = float(np.sum(mass * 0.5 * (x[rows] - y[cols]) ** 2))
    T = np.bincount(rows, weights=mass * y[cols], minlength=x.size) / np.bincount(
        rows, weights=mass, minlength=x.size)
    starts = np.searchsorted(rows, np.arange(x.size))
    ymin = np.minimum.reduceat(y[cols], starts)
    ymax = np.maximum.reduceat(y[cols], starts)
    # any slope between the last target of row i and the first of row i+1 keeps
    # every plan pair in the discrete subdifferential
    slopes = 0.5 * (ymax[:-1] + ymin[1:])
    u0 = 0.5 * x[0] ** 2 + np.concatenate([[0.0], np.cumsum(slopes * np.diff(x))])
    u0_field = PotentialField(mu.nodes, u0, 0.0, "kantorovich-u0", mu)
    v0 = legendre_transform(u0_field, nu.nodes)
    return ReferenceSolution(
        w2sq=w2sq,
        map_values=T[:, None],
        u0=u0_field,
        v0=PotentialField(nu.nodes, v0.values, 0.0, "kantorovich-v0", nu),
        method="quantile-1d",
        plan_rows=rows,
        plan_cols=cols,
        plan_mass=mass,
    )


def solve_discrete_lp(mu: DiscreteMarginal, nu: DiscreteMarginal,
                      max_nodes: int = LP_MAX_NODES) -> ReferenceSolution:
    """Exact discrete Monge-Kantorovich LP with cost |x - y|^2 / 2."""
    N, M = mu.size, nu.size
    if N > max_nodes or M > max_nodes:
        raise CapacityError(f"LP limited to {max_nodes} nodes per side, got {N} x {M}")
    X, Y, a, b = mu.nodes, nu.nodes, mu.weights, nu.weights
    C = _kernel.sq_dist(X, Y)
    rows_op = sp.kron(sp.eye(N), np.ones((1, M)))
    cols_op = sp.kron(np.ones((1, N)), sp.eye(M))
    # the last column constraint is implied by the others
    A_eq = sp.vstack([rows_op, cols_op.tocsr()[:-1]]).tocsc()
    b_eq = np.concatenate([a, b[:-1]])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise InternalError(f"transport LP failed: {res.message}")
    P = np.clip(res.x.reshape(N, M), 0.0, None)
    duals = res.eqlin.marginals
    phi = np.array(duals[:N])
    psi = np.concatenate([duals[N:], [0.0]])
    shift = phi[0]
    phi, psi = phi - shift, psi + shift
    primal = float(np.sum(P * C))
    gap = primal - float(a @ phi + b @ psi)

    support = P > 1e-14
    rows, cols = np.nonzero(support)
    mass = P[rows, cols]
    T = (P @ Y) / P.sum(axis=1)[:, None]
    h = max(mu.h, nu.h)
    for i in range(N):
        pts = Y[support[i]]
        if pts.shape[0] > 1:
            spread = np.max(np.linalg.norm(pts[:, None] - pts[None, :], axis=-1))
            if spread > 2 * h:
                warnings.warn("optimal plan splits a source node over targets farther apart than "
                              "two grid spacings", RuntimeWarning, stacklevel=2)
                break
    return ReferenceSolution(
        w2sq=primal,
        map_values=T,
        u0=PotentialField(X, 0.5 * np.sum(X * X, axis=1) - phi, 0.0, "kantorovich-u0", mu),
        v0=PotentialField(Y, 0.5 * np.sum(Y * Y, axis=1) - psi, 0.0, "kantorovich-v0", nu),
        method="discrete-lp",
        plan_rows=rows,
        plan_cols=cols,
        plan_mass=mass,
        duality_gap=gap,
    )


def solve_reference(mu: DiscreteMarginal, nu: DiscreteMarginal) -> ReferenceSolution:
    """Quantile coupling in 1D, LP otherwise."""
    if mu.dimension == 1:
        return solve_quantile_1d(mu, nu)
    return solve_discrete_lp(mu, nu)


def _grid_array(field: PotentialField):
    m = field.marginal
    if m is None or not m.full_grid:
        raise ResolutionError("finite differences need a complete tensor grid")
    if m.resolution < 3:
        raise ResolutionError("need at least 3 nodes per axis")
    grid = np.empty((m.resolution,) * m.dimension)
    grid[tuple(m.grid_index.T)] = field.values
    return grid, m


def ma_residual(ref: ReferenceSolution, f: DensitySpec, g: DensitySpec) -> float:
    """max over interior nodes of |g(grad u0) det(D_h^2 u0) - f| with centered differences.

    Gradient and Hessian are both differenced from the ``u0`` samples, not
    taken from the stored map.
    """
    U, m = _grid_array(ref.u0)
    n, h = m.dimension, m.spacing
    inner = (slice(1, -1),) * n

    def shifted(offsets):
        return U[tuple(slice(1 + o, U.shape[k] - 1 + o) for k, o in enumerate(offsets))]

    zero = [0] * n
    grad = np.empty(U[inner].shape + (n,))
    hess = np.empty(U[inner].shape + (n, n))
    for i in range(n):
        ei = list(zero); ei[i] = 1
        mi = list(zero); mi[i] = -1
        grad[..., i] = (shifted(ei) - shifted(mi)) / (2 * h[i])
        hess[..., i, i] = (shifted(ei) - 2 * U[inner] + shifted(mi)) / h[i] ** 2
        for j in range(i + 1, n):
            pp = list(zero); pp[i] = 1; pp[j] = 1
            pm = list(zero); pm[i] = 1; pm[j] = -1
            mp = list(zero); mp[i] = -1; mp[j] = 1
            mm = list(zero); mm[i] = -1; mm[j] = -1
            hij = (shifted(pp) - shifted(pm) - shifted(mp) + shifted(mm)) / (4 * h[i] * h[j])
            hess[..., i, j] = hess[..., j, i] = hij
    axes = [ax[1:-1] for ax in m.axes]
    pts = np.stack([c.ravel() for c in np.meshgrid(*axes, indexing="ij")], axis=1)
    det = np.linalg.det(hess.reshape(-1, n, n))
    lhs = g(grad.reshape(-1, n)) * det
    return float(np.max(np.abs(lhs - f(pts))))


class HolderFit(NamedTuple):
    alpha: float
    constant: float


def _pairs(points, min_sep):
    i, j = np.triu_indices(points.shape[0], k=1)
    d = np.linalg.norm(points[i] - points[j], axis=1)
    keep = d >= min_sep
    return i[keep], j[keep], d[keep]


def holder_exponent_u0(ref: ReferenceSolution, subset: ConvexDomain,
                       min_sep: Optional[float] = None) -> HolderFit:
    """Fit the Hölder exponent of the reference map over node pairs in ``subset``.

    The slope of log|T(x) - T(y)| against log|x - y| is clamped to (0, 1]; the
    constant is the largest ratio at that exponent.
    """
    mask = subset.contains(ref.mu.nodes)
    pts, T = ref.mu.nodes[mask], ref.map_values[mask]
    if min_sep is None:
        min_sep = 2 * ref.mu.h
    i, j, d = _pairs(pts, min_sep)
    dT = np.linalg.norm(T[i] - T[j], axis=1)
    ok = dT > 0
    if np.count_nonzero(ok) < 10:
        raise InsufficientDataError("fewer than 10 admissible node pairs for the Hölder fit")
    slope = np.polyfit(np.log(d[ok]), np.log(dT[ok]), 1)[0]
    alpha = float(min(max(slope, 1e-6), 1.0))
    return HolderFit(alpha, float(np.max(dT / d**alpha)))
