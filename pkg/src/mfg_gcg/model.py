"""
Problem data for potential mean field games on the torus.

A problem bundles a running cost ``L(x, t, v)`` with its Hamiltonian
``H(x, t, p) = sup_v -<p, v> - L(x, t, v)``, a convolution congestion
``f(m) = rho * m`` with potential ``F(m) = 1/2 int (rho * m) m``, a saturated
price ``phi(t, z) = pi0(t) + eta * tanh(z)`` with potential
``Phi(t, z) = <pi0(t), z> + eta * sum log cosh(z_j)``, an aggregation kernel
``a(x, t)`` in ``R^{k x d}``, an initial density and a terminal cost.

Callables describing spatial data take ``x`` of shape ``(..., d)`` and ``t``
broadcastable against ``x[..., 0]``.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, DomainError, SolverError
from .grid import ScalarField, TorusGrid, VectorField

SpaceTimeFn = Callable[[NDArray, NDArray], NDArray]


def _zero_offset(x: NDArray, t) -> NDArray:
    return np.zeros(x.shape[:-1])


@dataclass(frozen=True)
class QuadraticPlus:
    """``L(x, t, v) = weight/2 |v|^2 + offset(x, t)``."""

    weight: float = 1.0
    offset: SpaceTimeFn = _zero_offset

    def __post_init__(self):
        if not self.weight > 0:
            raise ConfigError(f"quadratic weight must be positive, got {self.weight}")

    @property
    def convexity_modulus(self) -> float:
        return self.weight

    def value(self, x, t, v):
        return 0.5 * self.weight * np.sum(v * v, axis=-1) + self.offset(x, t)

    def grad_v(self, x, t, v):
        return self.weight * np.asarray(v, dtype=float)

    def hess_v(self, x, t, v):
        d = np.shape(v)[-1]
        return np.broadcast_to(self.weight * np.eye(d), np.shape(v) + (d,))


@dataclass(frozen=True)
class Custom:
    """
    User supplied running cost.

    ``hess_v`` is optional; when missing, the Hessian of ``L`` in ``v`` is
    approximated by central differences of ``grad_v``. ``convexity_modulus``
    is the strong-convexity constant ``1/C0``.
    """

    value_fn: Callable[[NDArray, NDArray, NDArray], NDArray]
    grad_fn: Callable[[NDArray, NDArray, NDArray], NDArray]
    convexity_modulus: float
    hess_fn: Callable[[NDArray, NDArray, NDArray], NDArray] | None = None

    def value(self, x, t, v):
        return self.value_fn(x, t, v)

    def grad_v(self, x, t, v):
        return self.grad_fn(x, t, v)

    def hess_v(self, x, t, v):
        if self.hess_fn is not None:
            return self.hess_fn(x, t, v)
        v = np.asarray(v, dtype=float)
        d = v.shape[-1]
        h = 1e-6 * (1.0 + np.abs(v))
        cols = []
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            hj = h[..., j : j + 1]
            cols.append((self.grad_fn(x, t, v + hj * e) - self.grad_fn(x, t, v - hj * e)) / (2 * hj))
        return np.stack(cols, axis=-1)


RunningCost = Union[QuadraticPlus, Custom]


@dataclass(frozen=True)
class Hamiltonian:
    """Legendre transform of a running cost, ``H(p) = sup_v -<p,v> - L(v)``."""

    cost: RunningCost
    tol: float = 1e-12
    max_iter: int = 50

    def __call__(self, x, t, p) -> tuple[NDArray, NDArray]:
        """Return ``(H, H_p)``; the optimal control is ``-H_p``."""
        p = np.asarray(p, dtype=float)
        if not np.all(np.isfinite(p)):
            raise DomainError("Hamiltonian argument has non-finite entries")
        if isinstance(self.cost, QuadraticPlus):
            c = self.cost.weight
            ham = 0.5 * np.sum(p * p, axis=-1) / c - self.cost.offset(x, t)
            return ham, p / c
        v = self.maximizer(x, t, p)
        ham = -np.sum(p * v, axis=-1) - self.cost.value(x, t, v)
        return ham, -v

    def maximizer(self, x, t, p) -> NDArray:
        """Solve ``L_v(x, t, v) = -p`` for ``v``."""
        if p.shape[-1] == 1:
            return self._bracketed_newton(x, t, p)
        return self._damped_newton(x, t, p)

    def _bracketed_newton(self, x, t, p):
        # strong convexity: |L_v(v) - L_v(0)| >= |v| / C0, so the root lies in [-R, R]
        cost = self.cost
        zero = np.zeros_like(p)
        r = np.abs(p + cost.grad_v(x, t, zero)) / cost.convexity_modulus * (1 + 1e-9) + 1e-12
        lo, hi = -r, r.copy()
        v = np.zeros_like(p)
        scale = 1.0 + np.abs(p)
        for _ in range(self.max_iter):
            res = cost.grad_v(x, t, v) + p
            done = np.abs(res) <= self.tol * scale
            if np.all(done):
                return v
            pos = res > 0
            hi = np.where(pos, np.minimum(hi, v), hi)
            lo = np.where(pos, lo, np.maximum(lo, v))
            slope = cost.hess_v(x, t, v)[..., 0]
            step = v - res / slope
            inside = (step >= lo) & (step <= hi)
            # converged entries are frozen so a bisection fallback cannot move them off the root
            v = np.where(done, v, np.where(inside, step, 0.5 * (lo + hi)))
        res = cost.grad_v(x, t, v) + p
        if np.all(np.abs(res) <= self.tol * scale):
            return v
        raise SolverError(f"Legendre Newton did not converge in {self.max_iter} iterations "
                          f"(max residual {np.max(np.abs(res)):.3e})")

    def _damped_newton(self, x, t, p):
        cost = self.cost

        def objective(v):
            return cost.value(x, t, v) + np.sum(p * v, axis=-1)

        v = np.zeros_like(p)
        scale = 1.0 + np.linalg.norm(p, axis=-1)
        for _ in range(self.max_iter):
            res = cost.grad_v(x, t, v) + p
            done = np.linalg.norm(res, axis=-1) <= self.tol * scale
            if np.all(done):
                return v
            step = -np.linalg.solve(cost.hess_v(x, t, v), res[..., None])[..., 0]
            step[done] = 0.0
            f0 = objective(v)
            slope = np.sum(res * step, axis=-1)
            alpha = np.ones(v.shape[:-1])
            # near the root the decrease drops below rounding; allow for it so full steps are accepted
            noise = 1e-14 * (1.0 + np.abs(f0))
            for _ in range(30):
                trial = v + alpha[..., None] * step
                bad = objective(trial) > f0 + 1e-4 * alpha * slope + noise
                if not np.any(bad):
                    break
                alpha = np.where(bad, 0.5 * alpha, alpha)
            v = v + alpha[..., None] * step
        res = cost.grad_v(x, t, v) + p
        if np.all(np.linalg.norm(res, axis=-1) <= self.tol * scale):
            return v
        raise SolverError(f"Legendre Newton did not converge in {self.max_iter} iterations")


def hamiltonian_eval(ham: Hamiltonian, x, t, p) -> tuple[NDArray, NDArray]:
    """``(H(x,t,p), H_p(x,t,p))``."""
    return ham(x, t, p)


def perspective_cost(cost: RunningCost, m, w, x, t) -> NDArray:
    """
    ``m L(x, t, w/m)`` for ``m > 0``, ``0`` at ``(0, 0)`` and ``+inf`` otherwise.

    Vectorized: ``m`` has shape ``(...)`` and ``w`` shape ``(..., d)``.
    """
    m = np.asarray(m, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(m < 0):
        raise DomainError("perspective cost needs m >= 0")
    pos = m > 0
    safe_m = np.where(pos, m, 1.0)
    out = np.where(pos, safe_m * cost.value(x, t, w / safe_m[..., None]), 0.0)
    zero_w = np.all(w == 0, axis=-1)
    return np.where(pos | zero_w, out, np.inf)


# -- couplings --------------------------------------------------------------


def gaussian_coefficients(width: float, n_modes: int) -> tuple[float, ...]:
    """Nonnegative Fourier coefficients ``exp(-(k/width)^2)``, ``k = 0..n_modes-1``."""
    k = np.arange(n_modes)
    return tuple(float(c) for c in np.exp(-((k / width) ** 2)))


def _constant_price(value: Sequence[float]):
    base = np.asarray(value, dtype=float)

    def pi0(t):
        return np.broadcast_to(base, np.shape(t) + base.shape)

    return pi0


@dataclass(frozen=True)
class CouplingSpec:
    """
    Congestion kernel, price map and aggregation kernel.

    Attributes:
        kernel_coeffs: ``rho_hat(k)`` for ``|k| = 0, 1, ...``; ``rho_hat(0)`` must be 1.
            In d=2 the kernel is the tensor product of the 1-D kernel.
        price_base: ``pi0(t)``, callable returning shape ``(*t.shape, k)``.
        price_gain: ``eta >= 0``.
        aggregation: ``a(x, t)`` returning shape ``(..., k, d)``.
        k_agg: price dimension ``k``.
    """

    kernel_coeffs: tuple[float, ...]
    price_base: Callable[[NDArray], NDArray]
    price_gain: float
    aggregation: SpaceTimeFn
    k_agg: int = 1

    def __post_init__(self):
        c = np.asarray(self.kernel_coeffs, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise ConfigError("kernel_coeffs must be a nonempty sequence")
        if np.any(c < 0):
            raise ConfigError("kernel Fourier coefficients must be nonnegative")
        if abs(c[0] - 1.0) > 1e-14:
            raise ConfigError(f"kernel must have unit mass (rho_hat(0) = 1), got {c[0]}")
        if self.price_gain < 0:
            raise ConfigError(f"price gain must be >= 0, got {self.price_gain}")

    @classmethod
    def default(cls, width: float = 3.0, n_modes: int = 16, price_base: float = 0.1,
                price_gain: float = 0.5, aggregation: SpaceTimeFn | None = None) -> CouplingSpec:
        if aggregation is None:
            def aggregation(x, t):
                return np.sin(2 * np.pi * x)[..., None, :1]
        return cls(gaussian_coefficients(width, n_modes), _constant_price([price_base]),
                   price_gain, aggregation, 1)

    def symbol(self, grid: TorusGrid) -> NDArray:
        """Kernel symbol on the rfftn frequency grid (modes beyond Nyquist dropped)."""
        c = np.asarray(self.kernel_coeffs, dtype=float)

        def one_d(k):
            k = np.abs(k).astype(int)
            keep = (k < c.size) & (2 * k <= grid.nx)
            return np.where(keep, c[np.minimum(k, c.size - 1)], 0.0)

        k_full = np.fft.fftfreq(grid.nx, d=1.0 / grid.nx)
        k_half = np.fft.rfftfreq(grid.nx, d=1.0 / grid.nx)
        axes = [k_full] * (grid.dim - 1) + [k_half]
        mesh = np.meshgrid(*axes, indexing="ij")
        out = np.ones(mesh[0].shape)
        for k in mesh:
            out = out * one_d(k)
        return out

    def kernel_values(self, grid: TorusGrid) -> NDArray:
        """Nodal values of ``rho``."""
        delta = np.zeros(grid.space_shape)
        delta[(0,) * grid.dim] = 1.0 / grid.cell_volume
        return grid.convolve(delta, self.symbol(grid))

    def price(self, t, z) -> NDArray:
        """``phi(t, z) = pi0(t) + eta tanh(z)``."""
        return self.price_base(t) + self.price_gain * np.tanh(z)

    def price_potential(self, t, z) -> NDArray:
        """``Phi(t, z) = <pi0(t), z> + eta sum log cosh(z_j)``."""
        z = np.asarray(z, dtype=float)
        az = np.abs(z)
        # log cosh(z) = |z| + log1p(exp(-2|z|)) - log 2, stable for large |z|
        logcosh = az + np.log1p(np.exp(-2 * az)) - np.log(2.0)
        return np.sum(self.price_base(t) * z, axis=-1) + self.price_gain * np.sum(logcosh, axis=-1)


# -- problem ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MfgProblem:
    """
    Complete problem data on a grid.

    ``m0`` and ``g`` are nodal arrays of shape ``grid.space_shape``.
    """

    grid: TorusGrid
    cost: RunningCost
    coupling: CouplingSpec
    m0: NDArray = field(repr=False)
    g: NDArray = field(repr=False)
    viscosity: float = 1.0
    ham: Hamiltonian | None = None
    mass_tol: float = 1e-12

    def __post_init__(self):
        m0 = np.array(self.m0, dtype=float)
        g = np.array(self.g, dtype=float)
        if m0.shape != self.grid.space_shape or g.shape != self.grid.space_shape:
            raise ConfigError(f"m0 and g must have shape {self.grid.space_shape}")
        if not (np.all(np.isfinite(m0)) and np.all(np.isfinite(g))):
            raise ConfigError("m0 and g must be finite")
        if np.min(m0) <= 0:
            raise ConfigError("m0 not strictly positive")
        mass = float(self.grid.integrate(m0))
        if abs(mass - 1.0) > self.mass_tol:
            raise ConfigError(f"m0 does not have unit mass (mass = {mass!r})")
        if not self.viscosity > 0:
            raise ConfigError(f"viscosity must be positive, got {self.viscosity}")
        m0.flags.writeable = False
        g.flags.writeable = False
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "g", g)
        if self.ham is None:
            object.__setattr__(self, "ham", Hamiltonian(self.cost))

    @property
    def k_agg(self) -> int:
        return self.coupling.k_agg

    @property
    def eps0(self) -> float:
        return float(np.min(self.m0))

    @cached_property
    def kernel_symbol(self) -> NDArray:
        return self.coupling.symbol(self.grid)

    @cached_property
    def aggregation_grid(self) -> NDArray:
        """``a`` sampled at every node and level, shape ``(nt+1, *space, k, d)``."""
        grid = self.grid
        x = grid.points()[None]
        t = grid.times().reshape((-1,) + (1,) * grid.dim)
        a = np.broadcast_to(self.coupling.aggregation(x, t),
                            grid.scalar_shape + (self.k_agg, grid.dim)).astype(float)
        a.flags.writeable = False
        return a

    @cached_property
    def offset_grid(self) -> NDArray | None:
        """Quadratic-cost offset at every node and level (None for custom costs)."""
        if not isinstance(self.cost, QuadraticPlus):
            return None
        x, t = self.space_time_args()
        out = np.broadcast_to(self.cost.offset(x, t), self.grid.scalar_shape).astype(float)
        out.flags.writeable = False
        return out

    def hamiltonian_level(self, level: int, p: NDArray) -> tuple[NDArray, NDArray]:
        """``(H, H_p)`` at every node of one time level; ``p`` has shape ``(*space, d)``."""
        if self.offset_grid is not None:
            c = self.cost.weight
            return 0.5 * np.sum(p * p, axis=-1) / c - self.offset_grid[level], p / c
        return self.ham(self.grid.points(), self.grid.times()[level], p)

    @cached_property
    def price_base_grid(self) -> NDArray:
        pb = np.broadcast_to(self.coupling.price_base(self.grid.times()),
                             (self.grid.nt + 1, self.k_agg)).astype(float)
        pb.flags.writeable = False
        return pb

    def space_time_args(self, levels: slice | int = slice(None)) -> tuple[NDArray, NDArray]:
        """``(x, t)`` broadcastable over ``(levels, *space)``."""
        grid = self.grid
        t = grid.times()[levels]
        if np.ndim(t) == 0:
            return grid.points(), np.asarray(t)
        return grid.points()[None], t.reshape((-1,) + (1,) * grid.dim)


def congestion_field(problem: MfgProblem, m: ScalarField | NDArray) -> ScalarField:
    """``gamma(x, t) = (rho * m(t))(x)`` at every level."""
    values = m.values if isinstance(m, ScalarField) else m
    return ScalarField(problem.grid, _congestion(problem, values))


def _congestion(problem: MfgProblem, m_values: NDArray) -> NDArray:
    return problem.grid.convolve(m_values, problem.kernel_symbol)


def potential_F(problem: MfgProblem, m: ScalarField | NDArray, t_level: int | None = None):
    """``F(m) = 1/2 int (rho * m) m dx``; all levels when ``t_level`` is None."""
    values = m.values if isinstance(m, ScalarField) else np.asarray(m)
    if t_level is not None:
        if not 0 <= t_level <= problem.grid.nt:
            raise IndexError(f"t_level {t_level} outside [0, {problem.grid.nt}]")
        values = values[t_level]
    return 0.5 * problem.grid.integrate(_congestion(problem, values) * values)


def potential_Phi(problem: MfgProblem, z, t) -> NDArray:
    """``Phi(t, z)`` for ``z`` of shape ``(..., k)``."""
    return problem.coupling.price_potential(t, z)


def aggregate(problem: MfgProblem, w: VectorField | NDArray) -> NDArray:
    """``A[w](t) = int a(x, t) w(x, t) dx`` per level, shape ``(nt+1, k)``."""
    values = w.values if isinstance(w, VectorField) else w
    grid = problem.grid
    # w: (nt+1, d, *space) -> (nt+1, *space, d)
    w_last = np.moveaxis(values, 1, -1)
    integrand = np.einsum("n...kd,n...d->n...k", problem.aggregation_grid, w_last)
    return np.sum(integrand, axis=tuple(range(1, 1 + grid.dim))) * grid.cell_volume


def adjoint_price(problem: MfgProblem, price: NDArray) -> VectorField:
    """``A*[P](x, t) = a(x, t)^T P(t)``."""
    return VectorField(problem.grid, _adjoint_price(problem, price))


def _adjoint_price(problem: MfgProblem, price: NDArray) -> NDArray:
    out = np.einsum("n...kd,nk->n...d", problem.aggregation_grid, np.asarray(price, dtype=float))
    return np.moveaxis(out, -1, 1)


def predict_price(problem: MfgProblem, w_values: NDArray) -> NDArray:
    """``P(t) = phi(t, A[w](t))`` for every level."""
    return problem.price_base_grid + problem.coupling.price_gain * np.tanh(aggregate(problem, w_values))
