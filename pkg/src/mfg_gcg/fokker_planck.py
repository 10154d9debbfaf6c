"""
Forward Fokker-Planck solver and the density/flux change of variables.

The march is linear in ``(m, w)``::

    (I + dt nu (-Delta_h)) m^{n+1} = m^n - dt div_h(w^n),    w^n = m^n v^n

with the centered divergence of :class:`~mfg_gcg.grid.TorusGrid`. Both
operators have zero column sums, so mass is conserved to rounding. Because
the constraint is linear, convex combinations of feasible pairs stay
feasible, which is what the conditional gradient averaging relies on.
Positivity holds under the CFL and cell-Peclet bounds and is checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import InvariantError
from .grid import ScalarField, VectorField
from .hjb import CouplingState, _cfl_check
from .model import MfgProblem, aggregate, perspective_cost

MASS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FlowPair:
    """Density ``m`` and flux ``w = m v``."""

    m: ScalarField
    w: VectorField

    def validate(self, mass_tol: float = MASS_TOL) -> None:
        """Raise :class:`InvariantError` unless ``m > 0`` with unit mass at every level."""
        m = self.m.values
        if np.min(m) <= 0:
            n = int(np.argmin(np.min(m.reshape(m.shape[0], -1), axis=1)))
            raise InvariantError(f"density not strictly positive at level {n} (min {np.min(m):.3e})")
        mass = self.m.grid.integrate(m)
        worst = float(np.max(np.abs(mass - 1.0)))
        if worst > mass_tol:
            raise InvariantError(f"mass drift {worst:.3e} exceeds {mass_tol:.1e}")

    def combine(self, other: FlowPair, delta: float) -> FlowPair:
        """``(1 - delta) * self + delta * other``."""
        grid = self.m.grid
        m = (1.0 - delta) * self.m.values + delta * other.m.values
        w = (1.0 - delta) * self.w.values + delta * other.w.values
        return FlowPair(ScalarField(grid, m), VectorField(grid, w))

    @classmethod
    def stationary(cls, problem: MfgProblem) -> FlowPair:
        """``(m0, 0)`` extended constantly in time."""
        grid = problem.grid
        return cls(ScalarField.constant_in_time(grid, problem.m0), VectorField.zeros(grid))


def solve_fp(problem: MfgProblem, v: VectorField, check_cfl: bool = True) -> FlowPair:
    """March the density forward from ``m0`` under the feedback ``v``."""
    grid = problem.grid
    dt = grid.dt
    vv = v.values
    if check_cfl:
        per_level = np.max(np.abs(vv[:-1]).reshape(grid.nt, -1), axis=1)
        worst = int(np.argmax(per_level * grid.dt / grid.dx > 1.0))
        _cfl_check(problem, vv[worst], worst, "Fokker-Planck")
    m = np.empty(grid.scalar_shape)
    m[0] = problem.m0
    for n in range(grid.nt):
        rhs = m[n] - dt * grid.div(m[n] * vv[n])
        m[n + 1] = grid.solve_diffusion(rhs, dt * problem.viscosity)
        low = float(np.min(m[n + 1]))
        if not low > 0:
            raise InvariantError(f"Fokker-Planck produced a nonpositive density at level {n + 1} "
                                 f"(min {low:.3e})")
    return FlowPair(ScalarField(grid, m), VectorField(grid, m[:, None] * vv))


def chi_forward(m: ScalarField, v: VectorField) -> FlowPair:
    """``(m, v) -> (m, m v)``."""
    return FlowPair(m, VectorField(m.grid, m.values[:, None] * v.values))


def chi_inverse(pair: FlowPair) -> VectorField:
    """``(m, w) -> w / m``; requires ``m > 0``."""
    m = pair.m.values
    if np.min(m) <= 0:
        raise InvariantError("cannot recover a control where the density is not positive")
    return VectorField(pair.m.grid, pair.w.values / m[:, None])


def running_cost_levels(problem: MfgProblem, m: NDArray, w: NDArray) -> NDArray:
    """``int L~[m, w] dx`` at every level ``n < nt``."""
    grid = problem.grid
    x, t = problem.space_time_args(slice(0, grid.nt))
    lt = perspective_cost(problem.cost, m[:-1], np.moveaxis(w[:-1], 1, -1), x, t)
    return grid.integrate(lt)


def individual_cost(problem: MfgProblem, coupling: CouplingState, pair: FlowPair) -> float:
    """
    Discrete individual cost of a flow against frozen couplings.

    Left-endpoint rule in time over levels ``0..nt-1`` plus the terminal
    term ``int g m(T)``.
    """
    grid = problem.grid
    m, w = pair.m.values, pair.w.values
    nt = grid.nt
    running = running_cost_levels(problem, m, w)
    congestion = grid.integrate(coupling.gamma.values[:nt] * m[:nt])
    price = np.sum(aggregate(problem, w)[:nt] * coupling.price[:nt], axis=1)
    terminal = grid.integrate(problem.g * m[nt])
    return float(grid.dt * np.sum(running + congestion + price) + terminal)
