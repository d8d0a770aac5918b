import functools

import numpy as np
import pytest

from eotlab.instances import preset
from eotlab.marginals import ConvexDomain, build_marginal, make_density
from eotlab.reference_ot import solve_reference
from eotlab.sinkhorn import solve_schrodinger


def uniform(intervals, resolution):
    dom = ConvexDomain.box(*intervals)
    return build_marginal(dom, make_density("uniform", dom), resolution)


@functools.lru_cache(maxsize=None)
def marginals(name, resolution=None):
    return preset(name, resolution).build()


@functools.lru_cache(maxsize=None)
def reference(name, resolution=None):
    return solve_reference(*marginals(name, resolution))


@functools.lru_cache(maxsize=None)
def solved(name, epsilon, resolution=None, tol=1e-9):
    return solve_schrodinger(*marginals(name, resolution), epsilon, tol=tol)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
