"""Log-domain building blocks shared by the solver and the observables."""

import numpy as np
from scipy.special import logsumexp

ENTROPY_FLOOR_LOG = np.log(1e-300)


def log_density(X, Y, u, v, eps):
    """log of the Gibbs plan density against mu x nu on the node grid."""
    return (X @ Y.T - u[:, None] - v[None, :]) / eps


def c_transform_u(XY, v, log_b, eps):
    """u(x_i) = eps log sum_j b_j exp((<x_i, y_j> - v_j) / eps)."""
    return eps * logsumexp((XY - v[None, :]) / eps + log_b[None, :], axis=1)


def c_transform_v(XY, u, log_a, eps):
    return eps * logsumexp((XY - u[:, None]) / eps + log_a[:, None], axis=0)


def marginal_l1(a, b, logrho):
    """L1 distance between the plan's marginals and (a, b)."""
    with np.errstate(divide="ignore"):
        log_a, log_b = np.log(a), np.log(b)
    row = logsumexp(logrho + log_b[None, :], axis=1)
    col = logsumexp(logrho + log_a[:, None], axis=0)
    return float(np.sum(a * np.abs(np.expm1(row))) + np.sum(b * np.abs(np.expm1(col))))


def sq_dist(X, Y):
    return 0.5 * np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=-1)


def entropic_cost(a, b, X, Y, logrho, eps):
    """sum_ij a_i b_j rho_ij (|x_i - y_j|^2 / 2 + eps log rho_ij), with 0 log 0 = 0."""
    keep = logrho >= ENTROPY_FLOOR_LOG
    rho = np.where(keep, np.exp(np.where(keep, logrho, 0.0)), 0.0)
    integrand = rho * (sq_dist(X, Y) + eps * np.where(keep, logrho, 0.0))
    return float(a @ integrand @ b)


def transport_cost(a, b, X, Y, logrho):
    return float(a @ (np.exp(logrho) * sq_dist(X, Y)) @ b)


def dual_functional(a, b, X, Y, phi, psi, eps):
    """D_eps(phi, psi) with the exponential term summed in log space."""
    expo = (phi[:, None] + psi[None, :] - sq_dist(X, Y)) / eps
    with np.errstate(divide="ignore"):
        log_w = np.log(a)[:, None] + np.log(b)[None, :]
    mass = float(np.exp(logsumexp(expo + log_w)))
    return float(a @ phi + b @ psi) - eps * mass
