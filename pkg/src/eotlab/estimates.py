"""Sweep harness: every rate observable along an epsilon schedule, plus rate fits.

All error observables are measured on an interior subset ``shrink(source, margin)``
so boundary layers of the entropic potentials do not pollute the rates.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import potentials
from .detachment import check_p_detachment
from .errors import (
    EotLabError,
    InsufficientDataError,
    LogDomainError,
    NormalizationError,
    ParameterError,
)
from .instances import InstanceSpec
from .marginals import ConvexDomain, shrink
from .reference_ot import ReferenceSolution, holder_exponent_u0, solve_reference
from .sinkhorn import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    EntropicSolution,
    normalize_pair,
    solve_schrodinger,
    subset_mask,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epsilon", "gap", "lp_err_p2", "lp_err_p3", "lp_err_p0", "sup_u_err",
               "sup_grad_err", "hess_norm", "holder_seminorm", "iterations", "residual")
MIN_FIT_POINTS = 4


def _mask_or_raise(field, subset):
    mask = subset.contains(field.nodes)
    if not np.any(mask):
        raise InsufficientDataError("subset contains no grid node")
    return mask


def lp_gradient_error(sol: EntropicSolution, ref: ReferenceSolution, subset: ConvexDomain,
                      p: float) -> float:
    """sum over subset nodes of w_i |grad u_eps(x_i) - grad u0(x_i)|^p (no p-th root)."""
    if p < 1:
        raise ParameterError("p must be at least 1")
    mask = _mask_or_raise(sol.u, subset)
    d = np.linalg.norm(potentials.grad_u(sol, sol.mu.nodes[mask]) - ref.map_values[mask], axis=1)
    return float(np.sum(sol.mu.weights[mask] * d**p))


def sup_potential_error(sol_normalized: EntropicSolution, ref: ReferenceSolution,
                        subset: ConvexDomain) -> float:
    """max over subset nodes of |u_eps - u0|, for a pair normalized on ``subset``."""
    mask = _mask_or_raise(sol_normalized.u, subset)
    diff = (sol_normalized.u.values - ref.u0.values)[mask]
    if abs(diff.min()) > 1e-12:
        raise NormalizationError(f"min of u_eps - u0 on the subset is {diff.min():.3e}, not 0")
    return float(np.max(np.abs(diff)))


def sup_gradient_error(sol: EntropicSolution, ref: ReferenceSolution, subset: ConvexDomain) -> float:
    mask = _mask_or_raise(sol.u, subset)
    d = potentials.grad_u(sol, sol.mu.nodes[mask]) - ref.map_values[mask]
    return float(np.max(np.linalg.norm(d, axis=1)))


def hessian_sup_norm(sol: EntropicSolution, subset: ConvexDomain) -> float:
    """Largest spectral norm of hess u_eps over subset nodes."""
    mask = _mask_or_raise(sol.u, subset)
    H = potentials.hessian_u(sol, sol.mu.nodes[mask])
    return float(np.max(np.abs(np.linalg.eigvalsh(H))))


class HolderCases(NamedTuple):
    near: float
    far: float

    @property
    def value(self) -> float:
        return max(self.near, self.far)


def holder_cases(points, grads, beta: float, min_sep: float, epsilon: float = 0.0) -> HolderCases:
    """Largest |g(x) - g(y)| / |x - y|^beta split at |x - y| = epsilon.

    Only pairs with ``|x - y| >= min_sep`` count; a case with no pair reports 0.
    """
    if not 0 < beta <= 1:
        raise ParameterError("beta must lie in (0, 1]")
    pts = np.asarray(points, dtype=np.float64)
    G = np.asarray(grads, dtype=np.float64).reshape(pts.shape[0], -1)
    i, j = np.triu_indices(pts.shape[0], k=1)
    d = np.linalg.norm(pts[i] - pts[j], axis=1)
    keep = d >= min_sep
    if not np.any(keep):
        raise InsufficientDataError("no node pair at distance >= min_sep")
    i, j, d = i[keep], j[keep], d[keep]
    ratio = np.linalg.norm(G[i] - G[j], axis=1) / d**beta
    close = d < epsilon
    near = float(ratio[close].max()) if np.any(close) else 0.0
    far = float(ratio[~close].max()) if np.any(~close) else 0.0
    return HolderCases(near, far)


def _check_sep(h, min_sep):
    if min_sep < 2 * h * (1 - 1e-12):
        raise ParameterError(f"min_sep {min_sep} is below two grid spacings ({2 * h})")


def holder_seminorm(sol: EntropicSolution, subset: ConvexDomain, beta: float,
                    min_sep: Optional[float] = None) -> float:
    """Hölder seminorm of grad u_eps over subset node pairs at least ``min_sep`` apart.

    Pairs closer than epsilon and pairs farther apart are scanned separately and
    the larger of the two maxima is returned.
    """
    if min_sep is None:
        min_sep = 2 * sol.mu.h
    _check_sep(sol.mu.h, min_sep)
    mask = _mask_or_raise(sol.u, subset)
    pts = sol.mu.nodes[mask]
    return holder_cases(pts, potentials.grad_u(sol, pts), beta, min_sep, sol.epsilon).value


def reference_seminorm(ref: ReferenceSolution, subset: ConvexDomain, beta: float,
                       min_sep: Optional[float] = None) -> float:
    """Same seminorm for the reference map grad u0."""
    if min_sep is None:
        min_sep = 2 * ref.mu.h
    _check_sep(ref.mu.h, min_sep)
    mask = _mask_or_raise(ref.u0, subset)
    return holder_cases(ref.mu.nodes[mask], ref.map_values[mask], beta, min_sep).value


def beta_from_alpha(alpha: float, n: int) -> float:
    if not 0 < alpha <= 1:
        raise ParameterError("alpha must lie in (0, 1]")
    if int(n) < 1:
        raise ParameterError("dimension must be at least 1")
    return min(1.0 / n**2, alpha**2 / (1 + alpha) ** 2)


def p0_from_alpha(alpha: float) -> float:
    if not 0 < alpha <= 1:
        raise ParameterError("alpha must lie in (0, 1]")
    return (1 + alpha) / alpha


class RateFit(NamedTuple):
    slope: float
    constant: float
    stderr: float


def fit_rate(epsilons: Sequence[float], values: Sequence[float], model: str = "power") -> RateFit:
    """Least-squares rate fit.

    ``power``: log v = slope log eps + log constant.  ``eps-log``: v = slope
    eps log(1/eps), through the origin (constant reported as 0).
    """
    e = np.asarray(epsilons, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if e.shape != v.shape:
        raise ParameterError("epsilons and values differ in length")
    if e.size < MIN_FIT_POINTS:
        raise InsufficientDataError(f"need at least {MIN_FIT_POINTS} points, got {e.size}")
    if np.any(e <= 0) or np.any(np.diff(e) >= 0):
        raise ParameterError("epsilons must be positive and strictly decreasing")
    if model == "power":
        if np.any(v <= 0):
            raise LogDomainError("power fit needs positive values")
        x, y = np.log(e), np.log(v)
        (slope, icpt), ssr = np.polyfit(x, y, 1, full=True)[:2]
        ssr = float(ssr[0]) if len(ssr) else 0.0
        sxx = float(np.sum((x - x.mean()) ** 2))
        return RateFit(float(slope), float(np.exp(icpt)), math.sqrt(ssr / (e.size - 2) / sxx))
    if model == "eps-log":
        z = e * np.log(1 / e)
        slope = float(z @ v / (z @ z))
        r = v - slope * z
        return RateFit(slope, 0.0, math.sqrt(float(r @ r) / (e.size - 1) / float(z @ z)))
    raise ParameterError(f"unknown rate model {model!r}")


def final_decade(epsilons: Sequence[float]) -> np.ndarray:
    """Indices of the smallest decade of epsilon, widened to at least four points."""
    e = np.asarray(epsilons, dtype=np.float64)
    idx = np.flatnonzero(e <= 10 * e.min() * (1 + 1e-12))
    if idx.size < MIN_FIT_POINTS:
        idx = np.arange(max(0, e.size - MIN_FIT_POINTS), e.size)
    return idx


@dataclass(frozen=True)
class FittedExponent:
    value: float
    constant: float
    stderr: float
    eps_range: tuple
    model: str


def monotone_violations(values: Sequence[float]) -> list:
    """Sizes of the increases in a series that should be non-increasing."""
    v = np.asarray(values, dtype=np.float64)
    up = np.diff(v)
    return [float(s) for s in up[up > 0]]


@dataclass(frozen=True)
class SweepReport:
    instance_id: str
    epsilons: tuple
    gap: tuple
    transport_gap: tuple
    lp_errors: dict
    sup_potential_error: tuple
    sup_gradient_error: tuple
    hessian_norm: tuple
    holder_seminorm: tuple
    holder_near: tuple
    holder_far: tuple
    iterations: tuple
    residual: tuple
    fitted: dict
    beta_used: float
    alpha_hat: float
    p0: float
    reference_seminorm: float
    min_sep: float
    target_diameter: float
    subset_mass: float
    w2sq: float
    dimension: int
    measured_detachment: tuple = field(default=(math.nan, math.nan))

    def row(self, k: int) -> tuple:
        return (self.epsilons[k], self.gap[k], self.lp_errors["p2"][k], self.lp_errors["p3"][k],
                self.lp_errors["p0"][k], self.sup_potential_error[k], self.sup_gradient_error[k],
                self.hessian_norm[k], self.holder_seminorm[k], self.iterations[k], self.residual[k])


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def sweep_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for k in range(len(report.epsilons)):
        buf.write(",".join(_fmt(x) for x in report.row(k)) + "\n")
    return buf.getvalue()


def summary_text(report: SweepReport) -> str:
    lines = [f"instance = {report.instance_id}",
             f"dimension = {report.dimension}",
             f"alpha_hat = {_fmt(report.alpha_hat)}",
             f"beta_used = {_fmt(report.beta_used)}",
             f"p0 = {_fmt(report.p0)}",
             f"w2sq = {_fmt(report.w2sq)}",
             f"reference_seminorm = {_fmt(report.reference_seminorm)}",
             f"max_holder_seminorm = {_fmt(max(report.holder_seminorm))}",
             f"detachment_p = {_fmt(report.measured_detachment[0])}",
             f"detachment_L = {_fmt(report.measured_detachment[1])}"]
    for name in sorted(report.fitted):
        f = report.fitted[name]
        lines.append(f"{name} = {_fmt(f.value)} stderr {_fmt(f.stderr)} model {f.model} "
                     f"eps [{_fmt(f.eps_range[1])}, {_fmt(f.eps_range[0])}]")
    return "\n".join(lines) + "\n"


def _fit(name, eps, series, model, idx, sign=1.0):
    e = np.asarray(eps)[idx]
    r = fit_rate(e, np.asarray(series)[idx], model)
    return name, FittedExponent(sign * r.slope, r.constant, r.stderr,
                                (float(e[0]), float(e[-1])), model)


def run_sweep(instance: InstanceSpec, epsilons: Sequence[float], ps: Sequence[float] = (2, 3),
              beta: Optional[float] = None, subset_margin: float = 0.1, tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER) -> SweepReport:
    """Solve the reference once, then every epsilon (largest first, warm-started).

    The CSV columns carry p = 2, 3 and p0 = (1 + alpha_hat)/alpha_hat; any
    other requested p is kept in ``lp_errors`` under ``"p<value>"``.
    """
    eps = sorted({float(e) for e in epsilons}, reverse=True)
    if not eps or eps[-1] <= 0:
        raise ParameterError("epsilons must be nonempty and positive")
    mu, nu = instance.build()
    subset = shrink(instance.source, subset_margin)
    ref = solve_reference(mu, nu)
    mask = subset_mask(ref.u0, subset)
    alpha = holder_exponent_u0(ref, subset).alpha
    p0 = p0_from_alpha(alpha)
    beta = beta_from_alpha(alpha, mu.dimension) if beta is None else float(beta)
    min_sep = 2 * mu.h
    ref_semi = reference_seminorm(ref, subset, beta, min_sep)
    labels = {"p2": 2.0, "p3": 3.0, "p0": p0}
    for p in ps:
        labels.setdefault(f"p{p:g}", float(p))

    cols = {k: [] for k in ("gap", "tgap", "supu", "supg", "hess", "hold", "near", "far", "it", "res")}
    lp = {k: [] for k in labels}
    prev = None
    for e in eps:
        sol = solve_schrodinger(mu, nu, e, tol=tol, max_iter=max_iter, init=prev)
        prev = sol
        norm = normalize_pair(sol, ref.u0, subset)
        rep = potentials.suboptimality_gap(sol, ref)
        pts = mu.nodes[mask]
        cases = holder_cases(pts, potentials.grad_u(sol, pts), beta, min_sep, e)
        cols["gap"].append(rep.gap)
        cols["tgap"].append(rep.transport_gap)
        cols["supu"].append(sup_potential_error(norm, ref, subset))
        cols["supg"].append(sup_gradient_error(sol, ref, subset))
        cols["hess"].append(hessian_sup_norm(sol, subset))
        cols["hold"].append(cases.value)
        cols["near"].append(cases.near)
        cols["far"].append(cases.far)
        cols["it"].append(sol.iterations)
        cols["res"].append(sol.marginal_residual)
        for k, p in labels.items():
            lp[k].append(lp_gradient_error(sol, ref, subset, p))
        log.info("%s eps=%g iterations=%d gap=%.6g", instance.name, e, sol.iterations, rep.gap)

    fitted = {}
    if len(eps) >= MIN_FIT_POINTS:
        idx = final_decade(eps)
        fitted = dict([
            _fit("cpt_slope", eps, cols["gap"], "eps-log", idx),
            _fit("a_hat", eps, cols["supu"], "power", idx),
            _fit("b_hat", eps, cols["supg"], "power", idx),
            _fit("m_hat", eps, cols["hess"], "power", idx, sign=-1.0),
            _fit("lp_p2_slope", eps, lp["p2"], "eps-log", idx),
            _fit("lp_p3_slope", eps, lp["p3"], "eps-log", idx),
        ])

    try:
        cert = check_p_detachment(ref.u0, ref.v0, subset, max(p0, 2.0), ref.map_field())
        detach = (cert.p, cert.best_L)
    except EotLabError as exc:
        log.info("no detachment measurement: %s", exc)
        detach = (max(p0, 2.0), math.nan)

    return SweepReport(
        instance_id=instance.name,
        epsilons=tuple(eps),
        gap=tuple(cols["gap"]),
        transport_gap=tuple(cols["tgap"]),
        lp_errors={k: tuple(v) for k, v in lp.items()},
        sup_potential_error=tuple(cols["supu"]),
        sup_gradient_error=tuple(cols["supg"]),
        hessian_norm=tuple(cols["hess"]),
        holder_seminorm=tuple(cols["hold"]),
        holder_near=tuple(cols["near"]),
        holder_far=tuple(cols["far"]),
        iterations=tuple(cols["it"]),
        residual=tuple(cols["res"]),
        fitted=fitted,
        beta_used=beta,
        alpha_hat=alpha,
        p0=p0,
        reference_seminorm=ref_semi,
        min_sep=min_sep,
        target_diameter=instance.target.diameter,
        subset_mass=float(mu.weights[mask].sum()),
        w2sq=ref.w2sq,
        dimension=mu.dimension,
        measured_detachment=detach,
    )
