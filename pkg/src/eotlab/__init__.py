"""Entropic optimal transport laboratory: Sinkhorn solver, reference transport,
potential observables and rate sweeps for quadratic cost on convex domains."""

from .detachment import (
    DetachmentCertificate,
    check_p_detachment,
    convex_ball_lower_bound,
    global_detachment_forward,
    legendre_transform,
)
from .estimates import (
    SweepReport,
    beta_from_alpha,
    fit_rate,
    hessian_sup_norm,
    holder_seminorm,
    lp_gradient_error,
    p0_from_alpha,
    run_sweep,
    sup_gradient_error,
    sup_potential_error,
)
from .instances import InstanceSpec, preset
from .marginals import ConvexDomain, DensitySpec, DiscreteMarginal, build_marginal, make_density, shrink
from .potentials import grad_u, grad_v, hessian_u, hessian_v, plan_density, suboptimality_gap
from .reference_ot import ReferenceSolution, holder_exponent_u0, ma_residual, solve_reference
from .sinkhorn import EntropicSolution, PotentialField, normalize_pair, solve_schrodinger

__version__ = "0.1.0"
