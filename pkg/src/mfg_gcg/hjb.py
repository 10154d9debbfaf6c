"""
Backward Hamilton-Jacobi-Bellman solver for frozen couplings.

One step from level ``n+1`` to ``n``::

    (I + dt nu (-Delta_h)) u_tilde = u^{n+1}
    u^n = u_tilde + dt (gamma^n - H(x, t_n, grad_h u_tilde + A*P^n))

Diffusion is implicit and the Hamiltonian explicit at the diffused level.
This is the exact Lagrangian dual of the Fokker-Planck march in
:mod:`mfg_gcg.fokker_planck`, so ``int u^0 m0`` is the exact minimum of the
discrete individual cost and the discrete exploitability is nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import CflError, ConfigError, DiagnosticsError
from .grid import ScalarField, VectorField
from .model import MfgProblem


@dataclass(frozen=True, eq=False)
class CouplingState:
    """Congestion field ``gamma`` and price curve ``P`` (shape ``(nt+1, k)``)."""

    gamma: ScalarField
    price: NDArray = field(repr=False)

    def __post_init__(self):
        price = np.array(self.price, dtype=float)
        grid = self.gamma.grid
        if price.ndim != 2 or price.shape[0] != grid.nt + 1:
            raise ConfigError(f"price must have shape (nt+1, k), got {price.shape}")
        if not np.all(np.isfinite(price)):
            raise ConfigError("price has non-finite values")
        price.flags.writeable = False
        object.__setattr__(self, "price", price)


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Discrete value function and the per-step scheme residual (length ``nt``)."""

    u: ScalarField
    residual: NDArray = field(repr=False)


def _check_coupling(problem: MfgProblem, coupling: CouplingState) -> None:
    if coupling.gamma.grid != problem.grid:
        raise ConfigError("coupling lives on a different grid")
    if coupling.price.shape[1] != problem.k_agg:
        raise ConfigError(f"price dimension {coupling.price.shape[1]} != k_agg {problem.k_agg}")


def _cfl_check(problem: MfgProblem, drift: NDArray, level: int, what: str) -> None:
    grid = problem.grid
    vmax = float(np.max(np.abs(drift))) if drift.size else 0.0
    number = grid.dt * vmax / grid.dx
    if number > 1.0:
        raise CflError(
            f"{what}: CFL bound dt*|v|/dx <= 1 violated at level {level} "
            f"(dt={grid.dt:.4g}, |v|max={vmax:.4g}, dx={grid.dx:.4g}, ratio={number:.4g}); "
            f"increase nt to at least {int(np.ceil(vmax * grid.horizon / grid.dx))}"
        )


def costate(problem: MfgProblem, u_next: NDArray, price_level: NDArray, level: int) -> tuple[NDArray, NDArray]:
    """
    Diffused value and Hamiltonian argument at one step.

    Returns ``(u_tilde, p)`` with ``p`` of shape ``(*space, d)``.
    """
    grid = problem.grid
    u_tilde = grid.solve_diffusion(u_next, grid.dt * problem.viscosity)
    a = problem.aggregation_grid[level]
    p = np.moveaxis(grid.grad(u_tilde), 0, -1) + np.einsum("...kd,k->...d", a, price_level)
    return u_tilde, p


def solve_hjb(problem: MfgProblem, coupling: CouplingState, check_cfl: bool = True) -> ValueFunction:
    """March the HJB scheme backward from ``u(T) = g``."""
    return solve_with_control(problem, coupling, check_cfl)[0]


def solve_with_control(problem: MfgProblem, coupling: CouplingState,
                       check_cfl: bool = True) -> tuple[ValueFunction, VectorField]:
    """Value function and its feedback control from a single backward sweep."""
    _check_coupling(problem, coupling)
    grid = problem.grid
    dt = grid.dt
    gamma = coupling.gamma.values
    u = np.empty(grid.scalar_shape)
    u[-1] = problem.g
    control = np.empty(grid.vector_shape)
    residual = np.zeros(grid.nt)
    for n in range(grid.nt - 1, -1, -1):
        u_tilde, p = costate(problem, u[n + 1], coupling.price[n], n)
        ham, ham_p = problem.hamiltonian_level(n, p)
        if check_cfl:
            _cfl_check(problem, ham_p, n, "HJB")
        u[n] = u_tilde + dt * (gamma[n] - ham)
        if not np.all(np.isfinite(u[n])):
            raise DiagnosticsError(f"non-finite value function at level {n}")
        control[n] = -np.moveaxis(ham_p, -1, 0)
        # the scheme's own equation: -(u^{n+1} - u^n)/dt + nu (-Delta_h) u_tilde + H - gamma = 0
        res = (-(u[n + 1] - u[n]) / dt + problem.viscosity * grid.neg_laplacian(u_tilde)
               + ham - gamma[n])
        residual[n] = float(np.max(np.abs(res)))
    control[-1] = _terminal_control(problem, coupling, u[-1])
    value = ValueFunction(ScalarField(grid, u), residual)
    return value, VectorField(grid, control)


def _terminal_control(problem: MfgProblem, coupling: CouplingState, u_last: NDArray) -> NDArray:
    grid = problem.grid
    aP = np.einsum("...kd,k->...d", problem.aggregation_grid[-1], coupling.price[-1])
    p_last = np.moveaxis(grid.grad(u_last), 0, -1) + aP
    return -np.moveaxis(problem.hamiltonian_level(grid.nt, p_last)[1], -1, 0)


def best_response_control(problem: MfgProblem, coupling: CouplingState, value: ValueFunction) -> VectorField:
    """
    Feedback ``v = -H_p(grad u_tilde + A*P)`` at every level.

    Levels ``n < nt`` use the diffused value of the step ``n+1 -> n``; the
    terminal level uses ``g`` directly (it does not enter any cost).
    """
    _check_coupling(problem, coupling)
    grid = problem.grid
    u = value.u.values
    out = np.empty(grid.vector_shape)
    for n in range(grid.nt):
        _, p = costate(problem, u[n + 1], coupling.price[n], n)
        out[n] = -np.moveaxis(problem.hamiltonian_level(n, p)[1], -1, 0)
    out[-1] = _terminal_control(problem, coupling, u[-1])
    return VectorField(grid, out)


def optimal_value(problem: MfgProblem, value: ValueFunction) -> float:
    """``int u(x, 0) m0(x) dx``, the minimum of the discrete individual cost."""
    return float(problem.grid.integrate(value.u.values[0] * problem.m0))
