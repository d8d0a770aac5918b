"""Observables of an entropic solution.

Gradients and Hessians use the representation formulas obtained by
differentiating the Schrödinger system: ``grad u(x)`` is the barycenter of the
conditional law of ``y`` given ``x`` under the Gibbs plan, and ``hess u(x)`` is
that law's covariance divided by ``eps``.  At an off-node ``x`` the value of
``u`` is recomputed from the first equation instead of interpolated, so the
conditional weights always sum to one.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from . import _kernel
from .errors import DomainError, InstanceError
from .sinkhorn import EntropicSolution


def _as_points(points, dim):
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 0 or (p.ndim == 1 and dim > 1)
    return p.reshape(-1, dim), single


def _check_box(points, nodes):
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    tol = 1e-12 * max(1.0, float(np.abs(nodes).max()))
    if np.any(points < lo - tol) or np.any(points > hi + tol):
        raise DomainError("query point outside the node bounding box")


def conditional_weights(sol: EntropicSolution, x, side: str = "u"):
    """Conditional law of the other variable at each query point.

    Returns ``(weights, potential)`` where ``weights[k]`` sums to one over the
    opposite marginal's nodes and ``potential[k]`` is the potential at the
    query point recomputed from the corresponding Schrödinger equation.
    """
    if side == "u":
        own, other, other_pot = sol.mu, sol.nu, sol.v.values
    else:
        own, other, other_pot = sol.nu, sol.mu, sol.u.values
    p, _ = _as_points(x, own.dimension)
    _check_box(p, own.nodes)
    eps = sol.epsilon
    S = (p @ other.nodes.T - other_pot[None, :]) / eps + np.log(other.weights)[None, :]
    lse = logsumexp(S, axis=1)
    return np.exp(S - lse[:, None]), eps * lse


def u_at(sol: EntropicSolution, x):
    """u_eps at arbitrary points via the first Schrödinger equation."""
    _, single = _as_points(x, sol.mu.dimension)
    vals = conditional_weights(sol, x, "u")[1]
    return float(vals[0]) if single else vals


def v_at(sol: EntropicSolution, y):
    _, single = _as_points(y, sol.nu.dimension)
    vals = conditional_weights(sol, y, "v")[1]
    return float(vals[0]) if single else vals


def _grad(sol, x, side):
    _, single = _as_points(x, sol.mu.dimension)
    W, _ = conditional_weights(sol, x, side)
    other = sol.nu.nodes if side == "u" else sol.mu.nodes
    g = W @ other
    return g[0] if single else g


def grad_u(sol: EntropicSolution, x):
    """Conditional barycenter sum_j b_j y_j exp((<x, y_j> - v_j - u(x))/eps)."""
    return _grad(sol, x, "u")


def grad_v(sol: EntropicSolution, y):
    return _grad(sol, y, "v")


def _hess(sol, x, side):
    _, single = _as_points(x, sol.mu.dimension)
    W, _ = conditional_weights(sol, x, side)
    other = sol.nu.nodes if side == "u" else sol.mu.nodes
    g = W @ other
    d = other[None, :, :] - g[:, None, :]
    H = np.einsum("kj,kja,kjb->kab", W, d, d) / sol.epsilon
    H = 0.5 * (H + np.swapaxes(H, 1, 2))
    return H[0] if single else H


def hessian_u(sol: EntropicSolution, x):
    """Conditional covariance of y given x, divided by eps."""
    return _hess(sol, x, "u")


def hessian_v(sol: EntropicSolution, y):
    return _hess(sol, y, "v")


def _node_or_equation(field_values, nodes, q, fallback):
    hit = np.flatnonzero(np.all(nodes == q, axis=1))
    return field_values[hit[0]] if hit.size else fallback(q)


def plan_density(sol: EntropicSolution, x, y) -> float:
    """Density of the Gibbs plan against mu x nu at ``(x, y)``, computed in log space.

    At grid nodes the stored potentials are used; elsewhere each potential is
    recomputed from its Schrödinger equation.
    """
    px, _ = _as_points(x, sol.mu.dimension)
    py, _ = _as_points(y, sol.nu.dimension)
    _check_box(px, sol.mu.nodes)
    _check_box(py, sol.nu.nodes)
    ux = _node_or_equation(sol.u.values, sol.mu.nodes, px[0], lambda q: u_at(sol, q[None])[0])
    vy = _node_or_equation(sol.v.values, sol.nu.nodes, py[0], lambda q: v_at(sol, q[None])[0])
    return float(np.exp((px[0] @ py[0] - ux - vy) / sol.epsilon))


class PlanDensity:
    """Callable density of the entropic plan with respect to mu x nu."""

    def __init__(self, solution: EntropicSolution):
        self.solution = solution

    def __call__(self, x, y) -> float:
        return plan_density(self.solution, x, y)

    def on_nodes(self) -> np.ndarray:
        return np.exp(self.solution.log_density())

    def total_mass(self) -> float:
        s = self.solution
        return float(s.mu.weights @ self.on_nodes() @ s.nu.weights)


def entropic_cost(sol: EntropicSolution) -> float:
    """Transport cost plus eps times relative entropy of the plan."""
    return _kernel.entropic_cost(sol.mu.weights, sol.nu.weights, sol.mu.nodes, sol.nu.nodes,
                                 sol.log_density(), sol.epsilon)


def transport_cost(sol: EntropicSolution) -> float:
    return _kernel.transport_cost(sol.mu.weights, sol.nu.weights, sol.mu.nodes, sol.nu.nodes,
                                  sol.log_density())


def dual_functional(mu, nu, phi, psi, epsilon) -> float:
    """D_eps(phi, psi) for node vectors ``phi`` on mu and ``psi`` on nu."""
    return _kernel.dual_functional(mu.weights, nu.weights, mu.nodes, nu.nodes,
                                   np.asarray(phi, dtype=np.float64),
                                   np.asarray(psi, dtype=np.float64), float(epsilon))


def dual_value(sol: EntropicSolution) -> float:
    X, Y = sol.mu.nodes, sol.nu.nodes
    phi = 0.5 * np.sum(X * X, axis=1) - sol.u.values
    psi = 0.5 * np.sum(Y * Y, axis=1) - sol.v.values
    return dual_functional(sol.mu, sol.nu, phi, psi, sol.epsilon)


class GapReport(NamedTuple):
    gap: float
    transport_gap: float
    detachment_integral: float


def suboptimality_gap(sol: EntropicSolution, ref) -> GapReport:
    """Entropic cost minus W2^2, plus the two sides of the non-optimality identity.

    ``transport_gap`` is the plan's quadratic cost minus W2^2 and
    ``detachment_integral`` integrates ``u0(x) + v0(y) - <x, y>`` against the
    plan; the two agree whenever the plan has the right marginals.
    """
    X, Y = sol.mu.nodes, sol.nu.nodes
    if (ref.u0.nodes.shape != X.shape or ref.v0.nodes.shape != Y.shape
            or not np.array_equal(ref.u0.nodes, X) or not np.array_equal(ref.v0.nodes, Y)):
        raise InstanceError("reference solution was computed on a different instance")
    logrho = sol.log_density()
    P = sol.mu.weights[:, None] * np.exp(logrho) * sol.nu.weights[None, :]
    slack = ref.u0.values[:, None] + ref.v0.values[None, :] - X @ Y.T
    return GapReport(
        gap=entropic_cost(sol) - ref.w2sq,
        transport_gap=float(np.sum(P * _kernel.sq_dist(X, Y))) - ref.w2sq,
        detachment_integral=float(np.sum(P * slack)),
    )
