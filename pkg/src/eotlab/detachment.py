"""Discrete Legendre transforms and p-detachment certificates.

A dual pair (u, v) with u(x) + v(y) >= <x, y> has a p-detachment with constant
L when the Young residual dominates ``L |y - grad u(x)|^p``.  The helpers here
measure the largest such L on a finite sample, check the global bound that a
Hölder-continuous gradient implies, and estimate the convex-ball volume ratio
used for lower bounds on Gibbs-kernel integrals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .errors import (
    DualityViolationError,
    InsufficientDataError,
    ParameterError,
    PreconditionError,
)
from .marginals import ConvexDomain
from .sinkhorn import PotentialField, _tensor_layout

_CONJUGATE_KIND = {"kantorovich-u0": "kantorovich-v0", "kantorovich-v0": "kantorovich-u0"}
_CHUNK = 2_000_000


def legendre_transform(u: PotentialField, target_nodes) -> PotentialField:
    """Exact discrete conjugate ``v(y) = max_i (<y, x_i> - u(x_i))`` at ``target_nodes``."""
    Y = np.asarray(target_nodes, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, u.dimension)
    if Y.shape[0] == 0:
        raise ParameterError("legendre_transform needs at least one target node")
    X, ux = u.nodes, u.values
    out = np.empty(Y.shape[0])
    step = max(1, _CHUNK // X.shape[0])
    for s in range(0, Y.shape[0], step):
        out[s:s + step] = np.max(Y[s:s + step] @ X.T - ux[None, :], axis=1)
    return PotentialField(Y, out, u.epsilon, _CONJUGATE_KIND.get(u.kind, "generic"))


@dataclass(frozen=True)
class DetachmentCertificate:
    p: float
    best_L: float
    worst_pair: tuple
    sample_count: int
    min_slack: float
    required_L: Optional[float] = None

    @property
    def passes(self) -> bool:
        return self.required_L is None or self.best_L >= self.required_L


def _eval_grad(grad_u, xs):
    g = np.asarray(grad_u(xs), dtype=np.float64)
    return g.reshape(xs.shape[0], xs.shape[1])


def check_p_detachment(u: PotentialField, v: PotentialField, K: Optional[ConvexDomain], p: float,
                       grad_u: Callable, min_gap: Optional[float] = None) -> DetachmentCertificate:
    """Largest L with ``u(x) + v(y) - <x, y> >= L |y - grad u(x)|^p`` on sampled pairs.

    Pairs run over u-nodes inside ``K`` (all nodes when ``K`` is None) and all
    v-nodes, skipping those with ``|y - grad u(x)| < min_gap`` (two v-grid
    spacings by default).  Young's inequality is also checked on every
    u-node/v-node pair.
    """
    if p < 1:
        raise ParameterError("p must be at least 1")
    X, Y = u.nodes, v.nodes
    slack_all = u.values[:, None] + v.values[None, :] - X @ Y.T
    min_slack = float(slack_all.min())
    if min_slack < -1e-9:
        i, j = np.unravel_index(np.argmin(slack_all), slack_all.shape)
        raise DualityViolationError(
            f"u(x) + v(y) - <x, y> = {min_slack:.3e} at x={X[i]}, y={Y[j]}")
    mask = np.ones(X.shape[0], bool) if K is None else K.contains(X)
    xs, slack = X[mask], slack_all[mask]
    G = _eval_grad(grad_u, xs)
    dist = np.linalg.norm(Y[None, :, :] - G[:, None, :], axis=-1)
    if min_gap is None:
        min_gap = 2 * v.spacing
    ok = dist >= min_gap
    if not np.any(ok):
        raise InsufficientDataError("no admissible (x, y) pair for the detachment ratio")
    ratio = np.where(ok, np.maximum(slack, 0.0) / np.where(ok, dist, 1.0) ** p, np.inf)
    i, j = np.unravel_index(np.argmin(ratio), ratio.shape)
    return DetachmentCertificate(
        p=float(p),
        best_L=float(ratio[i, j]),
        worst_pair=(tuple(xs[i]), tuple(Y[j])),
        sample_count=int(np.count_nonzero(ok)),
        min_slack=min_slack,
    )


def grid_gradient(u: PotentialField) -> np.ndarray:
    """Second-order finite-difference gradient of ``u`` at its own nodes."""
    axes, index = _tensor_layout(u.nodes)
    grid = np.full(tuple(ax.size for ax in axes), np.nan)
    grid[tuple(index.T)] = u.values
    parts = np.gradient(grid, *axes, edge_order=2)
    if u.dimension == 1:
        parts = [parts]
    return np.stack([g[tuple(index.T)] for g in parts], axis=1)


def global_detachment_forward(u: PotentialField, alpha: float, lambda_h: Optional[float] = None,
                              grad_u: Optional[Callable] = None) -> DetachmentCertificate:
    """Check that a C^{1,alpha} convex u detaches from its conjugate with L = 1/(p lambda^p).

    The precondition is the upper Taylor bound
    ``u(x) <= u(x0) + <grad u(x0), x - x0> + lambda^(1+alpha)/(1+alpha) |x - x0|^(1+alpha)``
    on all node pairs; with ``lambda_h=None`` the smallest such lambda is
    measured from the grid.  The certificate passes when the sampled constant is
    at least 90% of the predicted one, with ``p = (1+alpha)/alpha``.

    Pairs closer than ``2 max(h, lambda^(1+alpha) h^alpha)`` are skipped: that is
    how far the gradient moves across one cell, and the discrete conjugate is
    affine over that range, so the slack vanishes there for any alpha < 1.
    """
    if not 0 < alpha <= 1:
        raise ParameterError("alpha must lie in (0, 1]")
    p = (1 + alpha) / alpha
    X, ux = u.nodes, u.values
    G = grid_gradient(u) if grad_u is None else _eval_grad(grad_u, X)
    i, j = np.triu_indices(X.shape[0], k=1)
    i, j = np.concatenate([i, j]), np.concatenate([j, i])
    d = np.linalg.norm(X[i] - X[j], axis=1)
    rem = ux[i] - ux[j] - np.sum(G[j] * (X[i] - X[j]), axis=1)
    ratios = rem / d ** (1 + alpha)
    k = int(np.argmax(ratios))
    measured = float(ratios[k])
    if lambda_h is None:
        lambda_h = ((1 + alpha) * max(measured, 0.0)) ** (1 / (1 + alpha))
    else:
        claimed = lambda_h ** (1 + alpha) / (1 + alpha)
        if measured > 1.05 * claimed:
            raise PreconditionError(
                f"Taylor remainder constant {measured:.4g} exceeds {claimed:.4g} by more than 5%",
                worst_pair=(tuple(X[i[k]]), tuple(X[j[k]])))
    if not lambda_h > 0:
        raise PreconditionError("u is affine on the grid; no detachment to certify")
    lo, hi = G.min(axis=0) - 1e-12, G.max(axis=0) + 1e-12
    targets = X[np.all((X >= lo) & (X <= hi), axis=1)]
    v = legendre_transform(u, targets)
    h = u.spacing
    gap = 2 * max(h, lambda_h ** (1 + alpha) * h**alpha)
    cert = check_p_detachment(u, v, None, p, lambda pts: _lookup(X, G, pts), min_gap=gap)
    required = 0.9 / (p * lambda_h**p)
    return DetachmentCertificate(cert.p, cert.best_L, cert.worst_pair, cert.sample_count,
                                 cert.min_slack, required_L=required)


def _lookup(nodes, values, pts):
    pts = np.asarray(pts).reshape(-1, nodes.shape[1])
    if pts.shape == nodes.shape and np.array_equal(pts, nodes):
        return values
    out = np.empty_like(pts)
    for k, q in enumerate(pts):
        out[k] = values[np.argmin(np.linalg.norm(nodes - q, axis=1))]
    return out


def _unit_ball_sample(n, n_points, seed):
    """Scrambled Halton points of the cube [-1, 1]^n that fall in the unit ball."""
    cube = 2 * qmc.Halton(d=n, scramble=True, seed=seed).random(n_points) - 1
    return cube[np.linalg.norm(cube, axis=1) <= 1]


def _boundary_point(omega, center, direction):
    lo, hi = 0.0, 2 * omega.diameter
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if omega.contains(center + mid * direction):
            lo = mid
        else:
            hi = mid
    return center + lo * direction


def closure_samples(omega: ConvexDomain, count: int, seed: int = 0) -> np.ndarray:
    """Deterministic points of the closed domain: corners, boundary, then interior."""
    n = omega.dimension
    lo, hi = omega.bounding_box()
    center = 0.5 * (lo + hi) if omega.kind != "polytope" else np.asarray(omega.vertices).mean(axis=0)
    pts = list(omega.corner_points()[: count // 2])
    n_boundary = max(0, count // 2 - len(pts))
    if n == 1:
        dirs = np.array([[-1.0], [1.0]])
    elif n == 2:
        ang = 2 * np.pi * (np.arange(n_boundary) + 0.5) / max(n_boundary, 1)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        g = qmc.Halton(d=n, scramble=True, seed=seed + 1).random(max(n_boundary, 1)) - 0.5
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    for d in dirs[:n_boundary]:
        pts.append(_boundary_point(omega, center, d))
    need = count - len(pts)
    sampler = qmc.Halton(d=n, scramble=True, seed=seed)
    while need > 0:
        cand = lo + (hi - lo) * sampler.random(4 * need + 8)
        cand = cand[omega.contains(cand)][:need]
        pts.extend(cand)
        need -= cand.shape[0]
    return np.asarray(pts[:count], dtype=np.float64)


def ball_ratio(omega: ConvexDomain, z, r: float, n_points: int = 100_000, seed: int = 0,
               _sample=None) -> float:
    """QMC estimate of the integral of exp(-|x - z|/r) over omega ∩ B_r(z), divided by |B_r(z)|."""
    V = _unit_ball_sample(omega.dimension, n_points, seed) if _sample is None else _sample
    z = np.asarray(z, dtype=np.float64)
    inside = omega.contains(z + r * V)
    # uniform in the ball: the ratio is the mean of the masked integrand
    return float(np.sum(np.exp(-np.linalg.norm(V, axis=1))[inside]) / V.shape[0])


@dataclass(frozen=True)
class BallBound:
    ratio: float
    z: tuple
    r: float
    evaluations: int


def convex_ball_scan(omega: ConvexDomain, z_samples: int = 16, r_samples: int = 16,
                     n_points: int = 100_000, seed: int = 0) -> BallBound:
    if z_samples < 16 or r_samples < 16:
        raise ParameterError("need at least 16 center and 16 radius samples")
    V = _unit_ball_sample(omega.dimension, n_points, seed)
    weight = np.exp(-np.linalg.norm(V, axis=1))
    zs = closure_samples(omega, z_samples, seed)
    rs = np.geomspace(1e-2, 0.99, r_samples)
    best = (math.inf, None, None)
    for z in zs:
        for r in rs:
            val = float(np.sum(weight[omega.contains(z + r * V)]) / V.shape[0])
            if val < best[0]:
                best = (val, tuple(z), float(r))
    return BallBound(best[0], best[1], best[2], len(zs) * len(rs))


def convex_ball_lower_bound(omega: ConvexDomain, z_samples: int = 16, r_samples: int = 16,
                            n_points: int = 100_000, seed: int = 0) -> float:
    """Smallest sampled ratio of the exponentially weighted ball integral to |B_r(z)|."""
    return convex_ball_scan(omega, z_samples, r_samples, n_points, seed).ratio
