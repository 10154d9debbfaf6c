"""
Uniform periodic space-time grids on the unit torus.

All solvers share the stencils defined here: rectangle-rule quadrature,
centered periodic differences (gradient and divergence are exact negative
adjoints of each other) and the implicit diffusion solve with the 3-point
(d=1) or 5-point (d=2) periodic Laplacian, diagonalized by the FFT.

Array layout: a scalar field is stored as ``(nt + 1, *space)`` and a vector
field as ``(nt + 1, dim, *space)`` where ``space == (nx,) * dim``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError

__all__ = [
    "TorusGrid",
    "ScalarField",
    "VectorField",
    "integrate_space",
    "gradient",
    "divergence",
]


@dataclass(frozen=True)
class TorusGrid:
    """
    Uniform discretization of ``T^d x [0, T]``.

    Attributes:
        dim: spatial dimension, 1 or 2
        nx: points per spatial axis
        nt: number of time steps (there are ``nt + 1`` time levels)
        horizon: final time ``T``
    """

    dim: int
    nx: int
    nt: int
    horizon: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError(f"dim must be 1 or 2, got {self.dim}")
        if self.nx < 4:
            raise ConfigError(f"nx must be >= 4, got {self.nx}")
        if self.nt < 2:
            raise ConfigError(f"nt must be >= 2, got {self.nt}")
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ConfigError(f"horizon must be positive, got {self.horizon}")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dt(self) -> float:
        return self.horizon / self.nt

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def space_shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.dim

    @property
    def scalar_shape(self) -> tuple[int, ...]:
        return (self.nt + 1, *self.space_shape)

    @property
    def vector_shape(self) -> tuple[int, ...]:
        return (self.nt + 1, self.dim, *self.space_shape)

    def index(self, i: int) -> int:
        """Periodic index map on one axis."""
        return i % self.nx

    def times(self) -> NDArray:
        return np.arange(self.nt + 1) * self.dt

    def axis(self) -> NDArray:
        return np.arange(self.nx) * self.dx

    @cached_property
    def _points(self) -> NDArray:
        mesh = np.meshgrid(*([self.axis()] * self.dim), indexing="ij")
        pts = np.stack(mesh, axis=-1)
        pts.flags.writeable = False
        return pts

    def points(self) -> NDArray:
        """Node coordinates, shape ``(*space, dim)``."""
        return self._points

    def _space_axes(self, ndim: int) -> tuple[int, ...]:
        return tuple(range(ndim - self.dim, ndim))

    # -- quadrature -------------------------------------------------------

    def integrate(self, values: NDArray) -> NDArray:
        """Rectangle rule over the trailing spatial axes."""
        return np.sum(values, axis=self._space_axes(np.ndim(values))) * self.cell_volume

    def inner(self, a: NDArray, b: NDArray) -> float:
        """Space-time grid pairing ``sum(a * b) * dx^d`` over all entries."""
        return float(np.sum(a * b) * self.cell_volume)

    # -- stencils ---------------------------------------------------------

    @cached_property
    def _neighbors(self) -> tuple[NDArray, NDArray]:
        i = np.arange(self.nx)
        return (i + 1) % self.nx, (i - 1) % self.nx

    def _diff(self, u: NDArray, axis: int) -> NDArray:
        up, down = self._neighbors
        return np.take(u, up, axis=axis) - np.take(u, down, axis=axis)

    def grad(self, u: NDArray) -> NDArray:
        """Centered gradient of ``(..., *space)``; the result is ``(..., dim, *space)``."""
        ax = self._space_axes(np.ndim(u))
        comps = [self._diff(u, a) / (2 * self.dx) for a in ax]
        return np.stack(comps, axis=np.ndim(u) - self.dim)

    def div(self, w: NDArray) -> NDArray:
        """Centered divergence of ``(..., dim, *space)``; the exact negative adjoint of ``grad``."""
        nd = np.ndim(w)
        comp_axis = nd - self.dim - 1
        out = None
        for j in range(self.dim):
            wj = np.take(w, j, axis=comp_axis)
            a = nd - 1 - self.dim + j
            term = self._diff(wj, a) / (2 * self.dx)
            out = term if out is None else out + term
        return out

    @cached_property
    def laplacian_symbol(self) -> NDArray:
        """Eigenvalues of ``-Delta_h`` on the rfftn frequency grid."""
        k_full = np.fft.fftfreq(self.nx, d=1.0 / self.nx)
        k_half = np.fft.rfftfreq(self.nx, d=1.0 / self.nx)
        one_d = lambda k: (2.0 / self.dx**2) * (1.0 - np.cos(2 * np.pi * k * self.dx))  # noqa: E731
        axes = [k_full] * (self.dim - 1) + [k_half]
        mesh = np.meshgrid(*axes, indexing="ij")
        sym = sum(one_d(k) for k in mesh)
        sym.flags.writeable = False
        return sym

    def neg_laplacian(self, u: NDArray) -> NDArray:
        """Apply ``-Delta_h`` (periodic 3-point / 5-point stencil) directly."""
        up, down = self._neighbors
        out = np.zeros_like(u)
        for a in self._space_axes(np.ndim(u)):
            out += (2 * u - np.take(u, up, axis=a) - np.take(u, down, axis=a)) / self.dx**2
        return out

    def solve_diffusion(self, rhs: NDArray, coef: float) -> NDArray:
        """
        Solve ``(I + coef * (-Delta_h)) u = rhs`` on the trailing spatial axes.

        The operator is circulant and symmetric positive definite. In d=1 its
        inverse is formed once per coefficient from the FFT diagonalization and
        applied as a dense product; in d=2 the FFT is applied directly.
        """
        if self.dim == 1:
            return rhs @ self._dense_inverse(coef)
        ax = self._space_axes(np.ndim(rhs))
        spec = np.fft.rfftn(rhs, axes=ax)
        spec /= 1.0 + coef * self.laplacian_symbol
        return np.fft.irfftn(spec, s=self.space_shape, axes=ax)

    @cached_property
    def _inverse_cache(self) -> dict[float, NDArray]:
        return {}

    def _dense_inverse(self, coef: float) -> NDArray:
        inv = self._inverse_cache.get(coef)
        if inv is None:
            col = np.fft.irfft(1.0 / (1.0 + coef * self.laplacian_symbol), n=self.nx)
            i = np.arange(self.nx)
            inv = col[(i[:, None] - i[None, :]) % self.nx]
            inv.flags.writeable = False
            self._inverse_cache[coef] = inv
        return inv

    def convolve(self, values: NDArray, symbol: NDArray) -> NDArray:
        """Periodic convolution given the kernel's rfftn symbol."""
        ax = self._space_axes(np.ndim(values))
        return np.fft.irfftn(np.fft.rfftn(values, axes=ax) * symbol, s=self.space_shape, axes=ax)


def _frozen(values: NDArray) -> NDArray:
    arr = np.array(values, dtype=float, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real value per (time level, spatial node)."""

    grid: TorusGrid
    values: NDArray = field(repr=False)

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != self.grid.scalar_shape:
            raise ConfigError(f"scalar field shape {vals.shape} != {self.grid.scalar_shape}")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("scalar field has non-finite values")
        object.__setattr__(self, "values", vals)

    def level(self, t_level: int) -> NDArray:
        _check_level(self.grid, t_level)
        return self.values[t_level]

    @classmethod
    def constant_in_time(cls, grid: TorusGrid, profile: NDArray) -> ScalarField:
        return cls(grid, np.broadcast_to(profile, grid.scalar_shape))


@dataclass(frozen=True, eq=False)
class VectorField:
    """d-vector per (time level, spatial node)."""

    grid: TorusGrid
    values: NDArray = field(repr=False)

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != self.grid.vector_shape:
            raise ConfigError(f"vector field shape {vals.shape} != {self.grid.vector_shape}")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("vector field has non-finite values")
        object.__setattr__(self, "values", vals)

    def level(self, t_level: int) -> NDArray:
        _check_level(self.grid, t_level)
        return self.values[t_level]

    @classmethod
    def zeros(cls, grid: TorusGrid) -> VectorField:
        return cls(grid, np.zeros(grid.vector_shape))


def _check_level(grid: TorusGrid, t_level: int) -> None:
    if not 0 <= t_level <= grid.nt:
        raise IndexError(f"t_level {t_level} outside [0, {grid.nt}]")


def integrate_space(field: ScalarField, t_level: int) -> float:
    """Rectangle-rule integral of one time level over the torus."""
    return float(field.grid.integrate(field.level(t_level)))


def gradient(field: ScalarField, t_level: int) -> NDArray:
    """Centered periodic gradient at one level, shape ``(dim, *space)``."""
    return field.grid.grad(field.level(t_level))


def divergence(field: VectorField, t_level: int) -> NDArray:
    """Centered periodic divergence at one level, shape ``space``."""
    return field.grid.div(field.level(t_level))
