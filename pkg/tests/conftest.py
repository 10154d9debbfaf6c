from __future__ import annotations

import numpy as np
import pytest

from mfg_gcg.grid import TorusGrid
from mfg_gcg.model import CouplingSpec, MfgProblem, QuadraticPlus, _constant_price
from mfg_gcg.profiles import default_problem


def constant_aggregation(a0):
    """Aggregation kernel equal to the ``k x d`` matrix ``a0`` everywhere."""
    a0 = np.asarray(a0, dtype=float)

    def aggregation(x, t):
        return np.broadcast_to(a0, np.shape(x)[:-1] + a0.shape)

    return aggregation


def decoupled_problem(grid: TorusGrid, m0=None, g=None, price_base=0.0, aggregation=None,
                      viscosity=1.0, offset=None) -> MfgProblem:
    """Identity-mean kernel (gamma == 1), zero price gain: couplings do not depend on the belief."""
    if aggregation is None:
        aggregation = constant_aggregation(np.zeros((1, grid.dim)))
    coupling = CouplingSpec((1.0,), _constant_price([price_base]), 0.0, aggregation, 1)
    cost = QuadraticPlus(1.0) if offset is None else QuadraticPlus(1.0, offset)
    m0 = np.ones(grid.space_shape) if m0 is None else m0
    g = np.zeros(grid.space_shape) if g is None else g
    return MfgProblem(grid, cost, coupling, m0, g, viscosity)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_problem():
    return default_problem(nx=32, nt=32)
