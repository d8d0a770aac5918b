"""Log-domain Sinkhorn iteration for the Schrödinger system.

The potentials are kept in the convex form

    u(x) = |x|^2/2 - phi(x),    v(y) = |y|^2/2 - psi(y),

so the system reads ``exp(u(x)/eps) = sum_j b_j exp((<x, y_j> - v_j)/eps)`` and
symmetrically for ``v``.  Each half-iteration solves one of the two equations
exactly with a stabilized log-sum-exp.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import _kernel
from .errors import (
    DomainError,
    EmptySubsetError,
    InstanceError,
    NonConvergenceError,
    ParameterError,
)
from .marginals import ConvexDomain, DiscreteMarginal

log = logging.getLogger(__name__)

KINDS = ("schrodinger-u", "schrodinger-v", "kantorovich-u0", "kantorovich-v0", "generic")

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10**6
WARN_ITER = 10**5


def _tensor_layout(nodes: np.ndarray):
    """Axes and per-node grid indices if ``nodes`` sit on a tensor grid."""
    axes, index = [], []
    for k in range(nodes.shape[1]):
        ax, inv = np.unique(nodes[:, k], return_inverse=True)
        axes.append(ax)
        index.append(inv)
    return tuple(axes), np.stack(index, axis=1)


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Samples of one potential on a node set.

    Off-node evaluation is multilinear on the underlying tensor grid; queries
    outside the node bounding box, or in a cell with a missing corner, raise
    :class:`DomainError`.
    """

    nodes: np.ndarray
    values: np.ndarray
    epsilon: float
    kind: str
    marginal: Optional[DiscreteMarginal] = None

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=np.float64))
        if nodes.shape[0] == 1 and np.ndim(self.nodes) == 1 and np.size(self.values) > 1:
            nodes = nodes.T
        values = np.asarray(self.values, dtype=np.float64).reshape(nodes.shape[0])
        if not np.all(np.isfinite(values)):
            raise ParameterError("potential values must be finite")
        if self.kind not in KINDS:
            raise ParameterError(f"unknown potential kind {self.kind!r}")
        nodes.setflags(write=False)
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_interp", None)

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    @property
    def spacing(self) -> float:
        if self.marginal is not None:
            return self.marginal.h
        axes, _ = _tensor_layout(self.nodes)
        gaps = [np.diff(ax).min() for ax in axes if ax.size > 1]
        return float(max(gaps)) if gaps else 0.0

    def with_values(self, values, kind=None) -> "PotentialField":
        return PotentialField(self.nodes, values, self.epsilon, kind or self.kind, self.marginal)

    def _interpolator(self):
        if self._interp is None:
            axes, index = _tensor_layout(self.nodes)
            grid = np.full(tuple(ax.size for ax in axes), np.nan)
            grid[tuple(index.T)] = self.values
            if all(ax.size >= 2 for ax in axes):
                interp = RegularGridInterpolator(axes, grid, method="linear", bounds_error=False)
            else:
                interp = None
            object.__setattr__(self, "_interp", (axes, interp))
        return self._interp

    def __call__(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        single = p.ndim == 1 and self.dimension > 1 or p.ndim == 0
        p = p.reshape(-1, self.dimension)
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        tol = 1e-12 * max(1.0, float(np.abs(self.nodes).max()))
        if np.any(p < lo - tol) or np.any(p > hi + tol):
            raise DomainError("query point outside the node bounding box")
        axes, interp = self._interpolator()
        if interp is None:
            out = np.empty(p.shape[0])
            for k, q in enumerate(p):
                hit = np.flatnonzero(np.all(np.abs(self.nodes - q) <= tol, axis=1))
                if hit.size == 0:
                    raise DomainError("field has a degenerate grid; only node queries allowed")
                out[k] = self.values[hit[0]]
        else:
            out = interp(np.clip(p, lo, hi))
            if np.any(np.isnan(out)):
                raise DomainError("query point falls in a grid cell with a missing node")
        return float(out[0]) if single else out


@dataclass(frozen=True, eq=False)
class EntropicSolution:
    """Converged Schrödinger pair together with its solve diagnostics."""

    u: PotentialField
    v: PotentialField
    epsilon: float
    marginal_residual: float
    iterations: int
    primal_value: float
    dual_value: float
    residual_trace: tuple = ()
    dual_trace: Optional[tuple] = None

    @property
    def mu(self) -> DiscreteMarginal:
        return self.u.marginal

    @property
    def nu(self) -> DiscreteMarginal:
        return self.v.marginal

    def log_density(self) -> np.ndarray:
        return _kernel.log_density(self.mu.nodes, self.nu.nodes, self.u.values, self.v.values,
                                   self.epsilon)


def _values(mu, nu, u, v, eps):
    X, Y, a, b = mu.nodes, nu.nodes, mu.weights, nu.weights
    logrho = _kernel.log_density(X, Y, u, v, eps)
    primal = _kernel.entropic_cost(a, b, X, Y, logrho, eps)
    phi = 0.5 * np.sum(X * X, axis=1) - u
    psi = 0.5 * np.sum(Y * Y, axis=1) - v
    dual = _kernel.dual_functional(a, b, X, Y, phi, psi, eps)
    return _kernel.marginal_l1(a, b, logrho), primal, dual


def solve_schrodinger(
    mu: DiscreteMarginal,
    nu: DiscreteMarginal,
    epsilon: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    init=None,
    trace_dual: bool = False,
) -> EntropicSolution:
    """Solve the discrete Schrödinger system by alternating log-sum-exp updates.

    ``init`` warm-starts the iteration: either a previous
    :class:`EntropicSolution` (typically at a larger epsilon) or a ``(u, v)``
    pair of node vectors.  Without it the iteration starts from ``u = |x|^2/2``.
    The last half-iteration updates ``u``, so the first equation holds to
    rounding and the second within ``tol`` in L1.
    """
    epsilon = float(epsilon)
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    if not tol > 0:
        raise ParameterError("tol must be positive")
    if mu.dimension != nu.dimension:
        raise InstanceError("marginals live in different dimensions")
    X, Y = mu.nodes, nu.nodes
    log_a, log_b = np.log(mu.weights), np.log(nu.weights)
    XY = X @ Y.T

    if init is None:
        u = 0.5 * np.sum(X * X, axis=1)
        v = _kernel.c_transform_v(XY, u, log_a, epsilon)
    elif isinstance(init, EntropicSolution):
        v = np.array(init.v.values)
    else:
        v = np.array(init[1], dtype=np.float64)

    trace: list[float] = []
    duals: Optional[list[float]] = [] if trace_dual else None
    warned = False
    for it in range(1, int(max_iter) + 1):
        u = _kernel.c_transform_u(XY, v, log_b, epsilon)
        v_next = _kernel.c_transform_v(XY, u, log_a, epsilon)
        # column marginal of the current plan is b_j exp((v_next_j - v_j)/eps)
        res = float(np.sum(nu.weights * np.abs(np.expm1((v_next - v) / epsilon))))
        trace.append(res)
        if duals is not None:
            duals.append(_values(mu, nu, u, v, epsilon)[2])
        if res <= tol:
            residual, primal, dual = _values(mu, nu, u, v, epsilon)
            if residual <= tol:
                break
        if it == WARN_ITER and not warned:
            warnings.warn(f"Sinkhorn at epsilon={epsilon} still running after {it} iterations "
                          f"(residual {res:.3e})", RuntimeWarning, stacklevel=2)
            warned = True
        v = v_next
    else:
        raise NonConvergenceError(epsilon, trace, max_iter)

    log.debug("eps=%g converged in %d iterations, residual %.3e", epsilon, it, residual)
    return EntropicSolution(
        u=PotentialField(X, u, epsilon, "schrodinger-u", mu),
        v=PotentialField(Y, v, epsilon, "schrodinger-v", nu),
        epsilon=epsilon,
        marginal_residual=residual,
        iterations=it,
        primal_value=primal,
        dual_value=dual,
        residual_trace=tuple(trace),
        dual_trace=tuple(duals) if duals is not None else None,
    )


def marginal_residual(sol: EntropicSolution) -> float:
    """L1 marginal defect of the plan induced by ``sol``, recomputed from scratch."""
    return _kernel.marginal_l1(sol.mu.weights, sol.nu.weights, sol.log_density())


def normalize_pair(sol: EntropicSolution, u0: PotentialField, subset: ConvexDomain) -> EntropicSolution:
    """Shift ``(u, v) -> (u - d, v + d)`` so that ``u - u0`` has minimum zero on ``subset``.

    The shift leaves the plan, the gradients and the primal value unchanged.
    """
    if u0.nodes.shape != sol.u.nodes.shape or not np.array_equal(u0.nodes, sol.u.nodes):
        raise InstanceError("u0 is not defined on the solution's grid")
    mask = subset.contains(sol.u.nodes)
    if not np.any(mask):
        raise EmptySubsetError("subset contains no grid node")
    d = float(np.min((sol.u.values - u0.values)[mask]))
    return replace(sol, u=sol.u.with_values(sol.u.values - d), v=sol.v.with_values(sol.v.values + d))


def subset_mask(field: PotentialField, subset: ConvexDomain) -> np.ndarray:
    mask = subset.contains(field.nodes)
    if not np.any(mask):
        raise EmptySubsetError("subset contains no grid node")
    return mask
