import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import reference
from eotlab.detachment import (
    ball_ratio,
    check_p_detachment,
    closure_samples,
    convex_ball_lower_bound,
    convex_ball_scan,
    global_detachment_forward,
    legendre_transform,
)
from eotlab.errors import (
    DualityViolationError,
    InsufficientDataError,
    ParameterError,
    PreconditionError,
)
from eotlab.marginals import ConvexDomain
from eotlab.sinkhorn import PotentialField


def midpoints(lo, hi, n):
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def field(x, vals):
    return PotentialField(np.asarray(x, float), np.asarray(vals, float), 0.0, "generic")


def power_grid(res=401):
    x = midpoints(-1, 1, res)  # res odd: 0 is a node
    return x, field(x, (2 / 3) * np.abs(x) ** 1.5)


def sqrt_map(q):
    return np.sign(q) * np.sqrt(np.abs(q))


def brute_conjugate(u_fn, lo, hi, y, n=10**6):
    z = np.linspace(lo, hi, n)
    uz = u_fn(z)
    return np.array([np.max(t * z - uz) for t in y])


def test_legendre_quadratic_self_conjugate():
    x = midpoints(0, 1, 1000)
    v = legendre_transform(field(x, x**2 / 2), x)
    assert np.max(np.abs(v.values - x**2 / 2)) <= (1 / 1000) ** 2


def test_legendre_linear():
    x = midpoints(0, 1, 1000)
    y = np.linspace(0.05, 0.95, 37)
    v = legendre_transform(field(x, 0.7 * x), y)
    assert np.max(np.abs(v.values - np.maximum(y - 0.7, 0))) <= 1 / 1000


def test_legendre_power_against_fine_brute_force():
    x, u = power_grid(2001)
    h = 2 / 2001
    y = np.linspace(-0.99, 0.99, 101)
    oracle = brute_conjugate(lambda z: (2 / 3) * np.abs(z) ** 1.5, -1, 1, y)
    np.testing.assert_allclose(oracle, np.abs(y) ** 3 / 3, atol=1e-9)
    v = legendre_transform(u, y)
    assert np.max(np.abs(v.values - oracle)) <= 2 * h**1.5


def test_legendre_empty_targets():
    with pytest.raises(ParameterError):
        legendre_transform(field([0.0, 1.0], [0.0, 0.5]), np.empty((0, 1)))


def test_quadratic_certificate():
    x = midpoints(0, 1, 200)
    u = field(x, x**2 / 2)
    cert = check_p_detachment(u, legendre_transform(u, x), None, 2, lambda p: p)
    assert cert.best_L == pytest.approx(0.5, abs=1e-6)


def test_steeper_quadratic_certificate():
    x = midpoints(0, 1, 200)
    cert = check_p_detachment(field(x, x**2), field(x, x**2 / 4), None, 2, lambda p: 2 * p)
    assert cert.best_L == pytest.approx(0.25, abs=1e-6)


def test_power_certificate_on_inner_interval():
    x, u = power_grid()
    v = field(x, np.abs(x) ** 3 / 3)
    cert = check_p_detachment(u, v, ConvexDomain.box((-0.5, 0.5)), 3, sqrt_map)
    assert 0 < cert.best_L <= 1 / 3
    # at x = 0 the ratio is (|y|^3/3)/|y|^3 = 1/3 exactly
    i0 = int(np.argmin(np.abs(x)))
    far = np.abs(x) >= 2 * (x[1] - x[0])
    ratio0 = (u.values[i0] + v.values[far] - x[i0] * x[far]) / np.abs(x[far]) ** 3
    np.testing.assert_allclose(ratio0, 1 / 3, rtol=1e-12)


def _dense_ratios(u, v, grad, p, gap):
    X, Y = u.nodes, v.nodes
    num = u.values[:, None] + v.values[None, :] - X @ Y.T
    d = np.abs(Y[:, 0][None, :] - grad(X)[:, 0][:, None])
    ok = d >= gap
    return num[ok], d[ok]


def test_certificate_sound_and_tight():
    x, u = power_grid(201)
    v = field(x, np.abs(x) ** 3 / 3)
    cert = check_p_detachment(u, v, None, 3, sqrt_map)
    num, d = _dense_ratios(u, v, sqrt_map, 3, 2 * u.spacing)
    assert np.all(num >= cert.best_L * d**3 - 1e-12)
    assert np.min(num / d**3) <= cert.best_L * (1 + 1e-6)
    again = check_p_detachment(u, v, None, 3, sqrt_map)
    assert again.best_L == pytest.approx(cert.best_L, abs=1e-12)
    assert again.sample_count == cert.sample_count == num.size


def test_duality_violation_detected():
    x = midpoints(0, 1, 50)
    with pytest.raises(DualityViolationError):
        check_p_detachment(field(x, x**2 / 2), field(x, x**2 / 2 - 1e-6), None, 2, lambda p: p)


def test_insufficient_pairs():
    x = midpoints(0, 1, 50)
    u = field(x, x**2 / 2)
    with pytest.raises(InsufficientDataError):
        check_p_detachment(u, field(x[:2], x[:2] ** 2 / 2), ConvexDomain.box((0, 0.03)), 2, lambda p: p)


@pytest.mark.parametrize("s", [0.5, 2.0])
def test_scaling_covariance_quadratic(s):
    # s u(x/s) on nodes s x pairs with s v(y): the slack becomes (s/2)|y - x/s|^2
    x = midpoints(0, 1, 200)
    u = field(s * x, s * (x**2 / 2))
    v = field(x, s * x**2 / 2)
    cert = check_p_detachment(u, v, None, 2, lambda p: p / s)
    assert cert.best_L == pytest.approx(0.5 * s, abs=1e-9)


def test_global_quadratic():
    x = midpoints(0, 1, 400)
    cert = global_detachment_forward(field(x, x**2 / 2), 1.0, 1.0, grad_u=lambda p: p)
    assert cert.required_L == pytest.approx(0.45)
    assert cert.passes and cert.best_L == pytest.approx(0.5, abs=1e-6)


def test_global_power_half():
    _, u = power_grid()
    cert = global_detachment_forward(u, 0.5)
    assert cert.p == 3
    assert cert.passes


def test_global_clamped_linear_gradient():
    x = midpoints(-1, 1, 401)
    vals = np.where(np.abs(x) < 0.5, x**2 / 2, 0.5 * np.abs(x) - 0.125)
    cert = global_detachment_forward(field(x, vals), 1.0)
    assert cert.passes


def test_global_precondition_violation_reports_pair():
    x = midpoints(0, 1, 200)
    with pytest.raises(PreconditionError) as info:
        global_detachment_forward(field(x, x**2), 1.0, 1.0, grad_u=lambda p: 2 * p)
    assert info.value.worst_pair is not None


@st.composite
def convex_grid_functions(draw):
    n = draw(st.integers(20, 80))
    a = draw(st.floats(0.0, 2.0))
    b = draw(st.floats(-1.0, 1.0))
    c = draw(st.floats(0.0, 1.0))
    k = draw(st.floats(0.2, 0.8))
    x = midpoints(0, 1, n)
    return x, a * x**2 + b * x + c * np.abs(x - k)


@settings(max_examples=40, deadline=None)
@given(convex_grid_functions())
def test_young_and_double_conjugate(data):
    x, vals = data
    u = field(x, vals)
    h = x[1] - x[0]
    targets = np.arange(-6, 6, h)
    v = legendre_transform(u, targets)
    slack = u.values[:, None] + v.values[None, :] - np.outer(x, targets)
    assert slack.min() >= -1e-9
    back = legendre_transform(v, x).values
    assert np.all(back <= vals + 1e-9)
    assert np.all(back >= vals - 2 * h * 1.0)


def test_ball_ratio_centered():
    disk = ConvexDomain.ball((0.0, 0.0), 1.0)
    assert ball_ratio(disk, (0.0, 0.0), 0.5) >= math.exp(-1)


def test_square_corner_bound():
    sq = ConvexDomain.box((0, 1), (0, 1))
    scan = convex_ball_scan(sq)
    assert scan.ratio >= 0.05
    fine = ball_ratio(sq, scan.z, scan.r, n_points=10**6)
    assert fine == pytest.approx(scan.ratio, rel=0.02)
    assert convex_ball_lower_bound(sq) == scan.ratio


def test_thin_rectangle_positive_and_stable():
    thin = ConvexDomain.box((0, 1), (0, 0.05))
    a = convex_ball_lower_bound(thin, n_points=100_000)
    b = convex_ball_lower_bound(thin, n_points=200_000)
    assert a > 0
    assert abs(a - b) <= 0.1 * a


def test_closure_samples_include_corners_and_stay_inside():
    sq = ConvexDomain.box((0, 1), (0, 1))
    z = closure_samples(sq, 16)
    assert z.shape == (16, 2)
    assert np.all(sq.contains(z))
    assert {(0.0, 0.0), (1.0, 1.0)} <= {tuple(p) for p in z[:4]}


def test_ball_scan_needs_samples():
    with pytest.raises(ParameterError):
        convex_ball_scan(ConvexDomain.box((0, 1), (0, 1)), z_samples=8)


def test_reference_potentials_detach():
    ref = reference("B")
    sub = ConvexDomain.box((0.1, 0.9))
    cert = check_p_detachment(ref.u0, ref.v0, sub, 2, ref.map_field())
    # u0 = x^2 has lambda = 2, so L = 1/(2 lambda) = 1/4
    assert cert.best_L == pytest.approx(0.25, abs=1e-3)
