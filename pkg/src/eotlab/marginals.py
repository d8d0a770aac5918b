"""Convex domains, bounded densities and their quadrature discretization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull
from scipy.special import erf

from .errors import (
    BoundViolationError,
    DegenerateDomainError,
    MarginTooLargeError,
    ParameterError,
)

MEMBERSHIP_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ConvexDomain:
    """A bounded convex region: axis-aligned box, vertex polytope or ball.

    Use the ``box``, ``polytope`` and ``ball`` constructors rather than the
    raw initializer.
    """

    kind: str
    dimension: int
    intervals: Optional[tuple] = None
    vertices: Optional[tuple] = None
    center: Optional[tuple] = None
    radius: Optional[float] = None
    _facets: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @classmethod
    def box(cls, *intervals: Sequence[float]) -> "ConvexDomain":
        ivs = tuple((float(lo), float(hi)) for lo, hi in intervals)
        if not ivs:
            raise DegenerateDomainError("a box needs at least one interval")
        for lo, hi in ivs:
            if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
                raise DegenerateDomainError(f"invalid interval ({lo}, {hi})")
        return cls(kind="box", dimension=len(ivs), intervals=ivs)

    @classmethod
    def polytope(cls, vertices: Sequence[Sequence[float]]) -> "ConvexDomain":
        pts = np.atleast_2d(np.asarray(vertices, dtype=np.float64))
        n = pts.shape[1]
        if not np.all(np.isfinite(pts)):
            raise DegenerateDomainError("polytope vertices must be finite")
        if n == 1:
            lo, hi = float(pts.min()), float(pts.max())
            if hi <= lo:
                raise DegenerateDomainError("1D polytope has empty interior")
            facets = np.array([[-1.0, lo], [1.0, -hi]])
        else:
            if pts.shape[0] < n + 1:
                raise DegenerateDomainError("too few vertices for a full-dimensional polytope")
            try:
                hull = ConvexHull(pts)
            except Exception as exc:  # qhull raises its own error type
                raise DegenerateDomainError(f"polytope has empty interior: {exc}") from exc
            facets = hull.equations
        verts = tuple(tuple(float(c) for c in p) for p in pts)
        dom = cls(kind="polytope", dimension=n, vertices=verts, _facets=_frozen(facets))
        # every vertex midpoint must pass the membership test
        mids = 0.5 * (pts[:, None, :] + pts[None, :, :]).reshape(-1, n)
        if not np.all(dom.contains(mids)):
            raise DegenerateDomainError("vertex set does not describe a convex polytope")
        return dom

    @classmethod
    def ball(cls, center: Sequence[float], radius: float) -> "ConvexDomain":
        c = tuple(float(x) for x in center)
        r = float(radius)
        if not c or not (r > 0 and math.isfinite(r)):
            raise DegenerateDomainError("ball needs a center and a positive radius")
        return cls(kind="ball", dimension=len(c), center=c, radius=r)

    def contains(self, points, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        """Closed-set membership for an ``(N, n)`` array (or one point)."""
        p = np.asarray(points, dtype=np.float64)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        if p.shape[1] != self.dimension:
            raise ParameterError(f"expected points of dimension {self.dimension}")
        if self.kind == "box":
            lo, hi = self.bounding_box()
            inside = np.all((p >= lo - tol) & (p <= hi + tol), axis=1)
        elif self.kind == "polytope":
            A, b = self._facets[:, :-1], self._facets[:, -1]
            inside = np.all(p @ A.T + b <= tol, axis=1)
        else:
            d = np.linalg.norm(p - np.asarray(self.center), axis=1)
            inside = d <= self.radius + tol
        return bool(inside[0]) if single else inside

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "box":
            iv = np.asarray(self.intervals)
            return iv[:, 0].copy(), iv[:, 1].copy()
        if self.kind == "polytope":
            v = np.asarray(self.vertices)
            return v.min(axis=0), v.max(axis=0)
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def corner_points(self) -> np.ndarray:
        """Extreme points when finite in number (box corners, polytope vertices)."""
        if self.kind == "box":
            iv = self.intervals
            grids = np.meshgrid(*[np.array(i) for i in iv], indexing="ij")
            return np.stack([g.ravel() for g in grids], axis=1)
        if self.kind == "polytope":
            return np.asarray(self.vertices)
        return np.empty((0, self.dimension))

    @property
    def diameter(self) -> float:
        return diameter(self)

    @property
    def volume(self) -> float:
        if self.kind == "box":
            return float(np.prod([hi - lo for lo, hi in self.intervals]))
        if self.kind == "ball":
            n = self.dimension
            return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * self.radius**n
        if self.dimension == 1:
            v = np.asarray(self.vertices)
            return float(v.max() - v.min())
        return float(ConvexHull(np.asarray(self.vertices)).volume)


def diameter(domain: ConvexDomain) -> float:
    """Largest pairwise distance between points of the domain."""
    if domain.kind == "box":
        return float(math.sqrt(sum((hi - lo) ** 2 for lo, hi in domain.intervals)))
    if domain.kind == "ball":
        return 2.0 * domain.radius
    v = np.asarray(domain.vertices)
    d = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)
    return float(d.max())


def shrink(domain: ConvexDomain, margin: float) -> ConvexDomain:
    """Return a convex subdomain whose boundary stays ``margin`` away from ``domain``'s."""
    margin = float(margin)
    if not margin > 0:
        raise ParameterError("margin must be positive")
    if margin >= domain.diameter / 2:
        raise MarginTooLargeError(f"margin {margin} >= diameter/2")
    if domain.kind == "box":
        ivs = [(lo + margin, hi - margin) for lo, hi in domain.intervals]
        if any(hi <= lo for lo, hi in ivs):
            raise MarginTooLargeError(f"margin {margin} empties the box {domain.intervals}")
        return ConvexDomain.box(*ivs)
    if domain.kind == "ball":
        if domain.radius <= margin:
            raise MarginTooLargeError(f"margin {margin} empties the ball")
        return ConvexDomain.ball(domain.center, domain.radius - margin)
    v = np.asarray(domain.vertices)
    c = v.mean(axis=0)
    A, b = domain._facets[:, :-1], domain._facets[:, -1]
    # distance from the center to each facet hyperplane (unit normals)
    depth = -(A @ c + b)
    s = 1.0 - margin / depth.min()
    if s <= 0:
        raise MarginTooLargeError(f"margin {margin} empties the polytope")
    return ConvexDomain.polytope(c + s * (v - c))


@dataclass(frozen=True)
class DensitySpec:
    """Mass per unit volume with certified bounds ``lower <= f <= upper``.

    ``evaluator`` is vectorized: it maps an ``(N, n)`` array to ``(N,)``.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    lower: float
    upper: float
    name: str = "custom"
    params: tuple = ()

    def __post_init__(self):
        if not (self.lower > 0 and self.upper >= self.lower):
            raise ParameterError(f"need 0 < lower <= upper, got {self.lower}, {self.upper}")

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.asarray(self.evaluator(p), dtype=np.float64).reshape(p.shape[0])


def _box_of(domain: ConvexDomain) -> tuple[np.ndarray, np.ndarray]:
    return domain.bounding_box()


def _uniform(domain, params):
    vol = domain.volume
    val = 1.0 / vol
    return (lambda p: np.full(p.shape[0], val)), val, val


def _sine(domain, params):
    amp = params.get("amplitude", 0.3)
    freq = params.get("frequency", 1.0)
    if not 0 <= amp < 1:
        raise ParameterError("sine-perturbed amplitude must lie in [0, 1)")
    lo, hi = _box_of(domain)
    width = hi[0] - lo[0]
    vol = domain.volume

    def f(p):
        return (1.0 + amp * np.sin(2 * np.pi * freq * (p[:, 0] - lo[0]) / width)) / vol

    return f, (1 - amp) / vol, (1 + amp) / vol


def _linear(domain, params):
    slope = params.get("slope", 0.5)
    if not 0 <= abs(slope) < 2:
        raise ParameterError("linear slope must satisfy |slope| < 2")
    lo, hi = _box_of(domain)
    mid, width = 0.5 * (lo[0] + hi[0]), hi[0] - lo[0]
    vol = domain.volume

    def f(p):
        return (1.0 + slope * (p[:, 0] - mid) / width) / vol

    return f, (1 - abs(slope) / 2) / vol, (1 + abs(slope) / 2) / vol


def _gaussian(domain, params):
    sigma = params.get("sigma", 0.5)
    if not sigma > 0:
        raise ParameterError("gaussian-truncated sigma must be positive")
    lo, hi = _box_of(domain)
    n = domain.dimension
    center = np.array([params.get(f"center{i}", params.get("center", 0.5 * (lo[i] + hi[i])))
                       for i in range(n)])
    if domain.kind == "box":
        # separable normalizer over the box
        s = sigma * math.sqrt(2)
        z = np.prod([0.5 * sigma * math.sqrt(2 * math.pi)
                     * (erf((hi[i] - center[i]) / s) - erf((lo[i] - center[i]) / s))
                     for i in range(n)])
    else:
        z = 1.0
    far = np.max(np.abs(np.stack([lo - center, hi - center])), axis=0)
    near = np.clip(center, lo, hi) - center
    upper = math.exp(-float(near @ near) / (2 * sigma**2)) / z
    lower = math.exp(-float(far @ far) / (2 * sigma**2)) / z

    def f(p):
        d = p - center
        return np.exp(-np.sum(d * d, axis=1) / (2 * sigma**2)) / z

    return f, lower, upper


DENSITY_REGISTRY: dict[str, Callable] = {
    "uniform": _uniform,
    "sine-perturbed": _sine,
    "linear": _linear,
    "gaussian-truncated": _gaussian,
}


def make_density(name: str, domain: ConvexDomain, params: Optional[Mapping[str, float]] = None) -> DensitySpec:
    """Instantiate a registry density on ``domain`` with certified bounds."""
    if name not in DENSITY_REGISTRY:
        raise ParameterError(f"unknown density {name!r}; choose from {sorted(DENSITY_REGISTRY)}")
    params = dict(params or {})
    f, lower, upper = DENSITY_REGISTRY[name](domain, params)
    return DensitySpec(f, float(lower), float(upper), name=name,
                       params=tuple(sorted(params.items())))


@dataclass(frozen=True)
class DiscreteMarginal:
    """Quadrature nodes and normalized weights discretizing ``f dx`` on a domain."""

    domain: ConvexDomain
    nodes: np.ndarray
    weights: np.ndarray
    resolution: int
    axes: tuple
    spacing: np.ndarray
    grid_index: np.ndarray
    mass: float
    density: Optional[DensitySpec] = None

    @property
    def dimension(self) -> int:
        return self.domain.dimension

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def mass_defect(self) -> float:
        return self.mass - 1.0

    @property
    def h(self) -> float:
        """Largest grid spacing over the axes."""
        return float(self.spacing.max())

    @property
    def full_grid(self) -> bool:
        return self.size == self.resolution**self.dimension

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))


def build_marginal(domain: ConvexDomain, density: DensitySpec, resolution: int) -> DiscreteMarginal:
    """Tensor midpoint rule on the bounding box, clipped to ``domain``.

    Weights are cell volume times density, renormalized to sum to one; the
    pre-normalization mass is kept in ``mass``.
    """
    resolution = int(resolution)
    if resolution < 2:
        raise ParameterError("resolution must be at least 2")
    lo, hi = domain.bounding_box()
    spacing = (hi - lo) / resolution
    axes = tuple(lo[i] + spacing[i] * (np.arange(resolution) + 0.5) for i in range(domain.dimension))
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    idx_mesh = np.meshgrid(*[np.arange(resolution)] * domain.dimension, indexing="ij")
    index = np.stack([m.ravel() for m in idx_mesh], axis=1)
    keep = domain.contains(nodes)
    nodes, index = nodes[keep], index[keep]
    if nodes.shape[0] == 0:
        raise DegenerateDomainError("no quadrature node falls inside the domain")
    values = density(nodes)
    bad = np.flatnonzero((values < density.lower * (1 - 1e-12)) | (values > density.upper * (1 + 1e-12))
                         | ~np.isfinite(values))
    if bad.size:
        k = bad[0]
        raise BoundViolationError(nodes[k], values[k], density.lower, density.upper)
    raw = values * float(np.prod(spacing))
    mass = float(math.fsum(raw))
    return DiscreteMarginal(
        domain=domain,
        nodes=_frozen(nodes),
        weights=_frozen(raw / mass),
        resolution=resolution,
        axes=tuple(_frozen(a) for a in axes),
        spacing=_frozen(spacing),
        grid_index=index,
        mass=mass,
        density=density,
    )
