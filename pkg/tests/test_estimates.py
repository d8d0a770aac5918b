import functools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import marginals, reference, solved
from eotlab import potentials
from eotlab.errors import (
    InsufficientDataError,
    LogDomainError,
    NormalizationError,
    ParameterError,
)
from eotlab.estimates import (
    CSV_COLUMNS,
    beta_from_alpha,
    fit_rate,
    hessian_sup_norm,
    holder_seminorm,
    lp_gradient_error,
    monotone_violations,
    p0_from_alpha,
    reference_seminorm,
    run_sweep,
    sup_gradient_error,
    sup_potential_error,
    sweep_csv,
)
from eotlab.instances import preset
from eotlab.marginals import ConvexDomain
from eotlab.sinkhorn import normalize_pair, solve_schrodinger

SUB = ConvexDomain.box((0.1, 0.9))
SCHEDULE = (0.2, 0.1, 0.05, 0.02, 0.01)


@functools.lru_cache(maxsize=None)
def sweep(name, schedule=SCHEDULE):
    return run_sweep(preset(name), schedule)


@pytest.mark.parametrize("p", [2, 3])
def test_lp_error_large_eps_direct_and_product_limit(p):
    mu, nu = marginals("A")
    sol = solve_schrodinger(mu, nu, 10.0)
    ref = reference("A")
    x, y, b, v = mu.nodes[:, 0], nu.nodes[:, 0], nu.weights, sol.v.values
    direct = 0.0
    for i in range(mu.size):
        if 0.1 <= x[i] <= 0.9:
            w = b * np.exp((x[i] * y - v) / 10.0)
            direct += mu.weights[i] * abs((w @ y) / w.sum() - x[i]) ** p
    val = lp_gradient_error(sol, ref, SUB, p)
    assert val == pytest.approx(direct, abs=1e-10)
    inside = (x >= 0.1) & (x <= 0.9)
    product = np.sum(mu.weights[inside] * np.abs(y @ b - x[inside]) ** p)
    assert val == pytest.approx(product, rel=0.05)


def test_lp_error_zero_only_for_matching_gradients():
    sol, ref = solved("B", 0.05), reference("B")
    assert lp_gradient_error(sol, ref, SUB, 2) > 0
    from dataclasses import replace
    fake = replace(ref, map_values=potentials.grad_u(sol, sol.mu.nodes))
    # gradients evaluated in a different batch agree to rounding only
    assert lp_gradient_error(sol, fake, SUB, 2) <= 1e-28


def test_lp_error_empty_subset():
    with pytest.raises(InsufficientDataError):
        lp_gradient_error(solved("A", 0.05), reference("A"), ConvexDomain.box((0.5001, 0.5002)), 2)


def test_lp_error_decreases_on_dilation():
    rep = sweep("B")
    assert len(monotone_violations(rep.lp_errors["p2"])) <= 1
    i, j = rep.epsilons.index(0.02), rep.epsilons.index(0.01)
    assert rep.lp_errors["p2"][j] < rep.lp_errors["p2"][i]


def test_sup_potential_error_normalized():
    ref = reference("A")
    series = []
    for eps in (0.1, 0.05, 0.02):
        norm = normalize_pair(solved("A", eps), ref.u0, SUB)
        mask = SUB.contains(norm.mu.nodes)
        assert np.min(np.abs(norm.u.values - ref.u0.values)[mask]) == 0.0
        series.append(sup_potential_error(norm, ref, SUB))
    assert series[0] > series[1] > series[2]


def test_sup_potential_error_rejects_raw_solution():
    with pytest.raises(NormalizationError):
        sup_potential_error(solved("B", 0.05), reference("B"), SUB)


def test_sup_gradient_fine_grid():
    mu, nu = marginals("A", 256)
    ref = reference("A", 256)
    sol = solve_schrodinger(mu, nu, 0.005)
    assert sup_gradient_error(sol, ref, SUB) <= 0.05


@pytest.mark.parametrize("name", ["A", "B", "D"])
def test_sup_dominates_mean(name):
    sol, ref = solved(name, 0.02), reference(name)
    mass = float(sol.mu.weights[SUB.contains(sol.mu.nodes)].sum())
    sup = sup_gradient_error(sol, ref, SUB)
    for p in (2, 3):
        assert sup >= (lp_gradient_error(sol, ref, SUB, p) / mass) ** (1 / p)
        assert sup**p * mass >= lp_gradient_error(sol, ref, SUB, p)


@pytest.mark.parametrize("eps", [0.2, 0.05, 0.01])
def test_hessian_envelope(eps):
    for name in "ABD":
        sol = solved(name, eps)
        diam = sol.nu.domain.diameter
        assert hessian_sup_norm(sol, SUB) <= diam**2 / (4 * eps) + 1e-9


def test_hessian_large_eps():
    mu, nu = marginals("A")
    sol = solve_schrodinger(mu, nu, 10.0)
    assert hessian_sup_norm(sol, SUB) == pytest.approx(1 / 120, rel=0.1)


def test_reference_seminorm_lipschitz_identity():
    ref = reference("A")
    assert reference_seminorm(ref, SUB, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_holder_uniform_on_identity():
    rep = run_sweep(preset("A"), (0.2, 0.1, 0.05, 0.02, 0.01, 0.005), beta=beta_from_alpha(1, 1))
    assert rep.beta_used == 0.25
    assert max(rep.holder_seminorm) <= 3 * rep.reference_seminorm


def test_holder_min_sep_monotone():
    sol = solved("D", 0.02)
    h = sol.mu.h
    seps = [2 * h, 4 * h, 8 * h, 16 * h]
    vals = [holder_seminorm(sol, SUB, 0.25, s) for s in seps]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_holder_errors():
    sol = solved("A", 0.05)
    with pytest.raises(ParameterError):
        holder_seminorm(sol, SUB, 0.25, sol.mu.h)
    with pytest.raises(InsufficientDataError):
        holder_seminorm(sol, SUB, 0.25, 2.0)
    with pytest.raises(ParameterError):
        holder_seminorm(sol, SUB, 1.5)


@pytest.mark.parametrize("alpha, n, beta", [(1, 1, 0.25), (1, 2, 0.25), (0.5, 1, 1 / 9)])
def test_beta_from_alpha(alpha, n, beta):
    assert beta_from_alpha(alpha, n) == pytest.approx(beta, abs=1e-15)


@pytest.mark.parametrize("alpha, p0", [(1, 2), (0.5, 3), (0.25, 5)])
def test_p0_from_alpha(alpha, p0):
    assert p0_from_alpha(alpha) == p0


@pytest.mark.parametrize("alpha", [0, -0.5, 1.5])
def test_alpha_out_of_range(alpha):
    with pytest.raises(ParameterError):
        p0_from_alpha(alpha)
    with pytest.raises(ParameterError):
        beta_from_alpha(alpha, 1)


def test_fit_exact_power():
    e = np.array([0.2, 0.1, 0.05, 0.02])
    fit = fit_rate(e, 3 * e**0.7, "power")
    assert fit.slope == pytest.approx(0.7, abs=1e-12)
    assert fit.constant == pytest.approx(3.0, abs=1e-12)
    assert fit.stderr < 1e-10


def test_fit_exact_eps_log():
    e = np.array([0.2, 0.1, 0.05, 0.02, 0.01])
    fit = fit_rate(e, 0.5 * e * np.log(1 / e), "eps-log")
    assert fit.slope == pytest.approx(0.5, abs=1e-14)
    assert fit.constant == 0.0 and fit.stderr < 1e-12


def test_fit_perturbed_power():
    e = np.array([0.2, 0.1, 0.05, 0.02, 0.01])
    sign = np.array([1, -1, 1, -1, 1])
    assert fit_rate(e, e**0.7 * (1 + 0.05 * sign), "power").slope == pytest.approx(0.7, abs=0.05)


def test_fit_errors():
    e = [0.2, 0.1, 0.05, 0.02]
    with pytest.raises(LogDomainError):
        fit_rate(e, [1, 0, 1, 1], "power")
    with pytest.raises(InsufficientDataError):
        fit_rate(e[:3], [1, 1, 1], "power")
    with pytest.raises(ParameterError):
        fit_rate(e[::-1], [1, 1, 1, 1], "power")
    with pytest.raises(ParameterError):
        fit_rate(e, [1, 1, 1, 1], "cubic")


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.1, 10.0))
def test_fit_recovers_any_power(k, c):
    e = np.geomspace(0.2, 0.005, 6)
    fit = fit_rate(e, c * e**k, "power")
    assert fit.slope == pytest.approx(k, abs=1e-9)
    assert fit.constant == pytest.approx(c, rel=1e-9)


def test_sweep_identity_report_shape():
    rep = sweep("A")
    assert rep.epsilons == SCHEDULE
    series = [rep.gap, rep.sup_potential_error, rep.sup_gradient_error, rep.hessian_norm,
              rep.holder_seminorm, rep.iterations, rep.residual, *rep.lp_errors.values()]
    assert all(len(s) == len(SCHEDULE) for s in series)
    assert all(g > 0 for g in rep.gap)
    assert all(b < a for a, b in zip(rep.gap, rep.gap[1:]))
    assert set(rep.fitted) >= {"cpt_slope", "a_hat", "b_hat", "m_hat"}
    assert all(f.eps_range == (0.1, 0.01) for f in rep.fitted.values())


def test_sweep_dilation_cost_slope():
    assert 0.3 <= sweep("B").fitted["cpt_slope"].value <= 0.8


@pytest.mark.xfail(strict=True, reason="slope on the coarse {0.5..0.05} schedule is 0.443; "
                                       "see the decisions ledger")
def test_sweep_square_cost_slope_coarse_schedule():
    t = time.perf_counter()
    rep = sweep("C", (0.5, 0.2, 0.1, 0.05))
    assert time.perf_counter() - t < 300
    assert 0.5 <= rep.fitted["cpt_slope"].value <= 1.6


@pytest.mark.parametrize("name", ["A", "B", "C", "D"])
def test_sweep_invariants(name):
    rep = sweep(name)
    assert min(rep.gap) >= -1e-8
    ups = monotone_violations(rep.gap)
    assert len(ups) <= 1 and all(u <= 1e-8 for u in ups)
    for eps, hn in zip(rep.epsilons, rep.hessian_norm):
        assert hn <= rep.target_diameter**2 / (4 * eps) + 1e-9
    for k in range(len(rep.epsilons)):
        for label in ("p2", "p3", "p0"):
            p = {"p2": 2, "p3": 3, "p0": rep.p0}[label]
            assert rep.sup_gradient_error[k] ** p * rep.subset_mass >= rep.lp_errors[label][k]
    assert max(rep.holder_seminorm) <= 3 * rep.reference_seminorm


def test_sweep_deterministic_bytes():
    a = sweep_csv(run_sweep(preset("D"), SCHEDULE))
    b = sweep_csv(run_sweep(preset("D"), SCHEDULE))
    assert a == b
    assert a.splitlines()[0] == ",".join(CSV_COLUMNS)


def test_sweep_nonconvergence_names_epsilon():
    from eotlab.errors import NonConvergenceError
    with pytest.raises(NonConvergenceError) as info:
        run_sweep(preset("A"), (0.005,), max_iter=10)
    assert info.value.epsilon == 0.005
