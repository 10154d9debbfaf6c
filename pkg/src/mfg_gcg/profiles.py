"""
Named analytic profiles for spatial problem data and the default problem.

Each profile maps node coordinates ``x`` of shape ``(..., d)`` to values of
shape ``(...)``; multi-dimensional profiles average the 1-D shape over axes.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError
from .grid import TorusGrid
from .model import CouplingSpec, MfgProblem, QuadraticPlus

Profile = Callable[[NDArray], NDArray]


def uniform(value: float = 1.0) -> Profile:
    return lambda x: np.full(np.shape(x)[:-1], float(value))


def cosine(base: float = 0.0, amplitude: float = 1.0, shift: float = 0.0, frequency: int = 1) -> Profile:
    """``base + amplitude * mean_j cos(2 pi frequency (x_j - shift))``."""

    def profile(x):
        return base + amplitude * np.mean(np.cos(2 * np.pi * frequency * (x - shift)), axis=-1)

    return profile


def von_mises(kappa: float = 1.0, center: float = 0.5) -> Profile:
    """``exp(kappa * mean_j cos(2 pi (x_j - center)))``."""

    def profile(x):
        return np.exp(kappa * np.mean(np.cos(2 * np.pi * (x - center)), axis=-1))

    return profile


PROFILES: dict[str, Callable[..., Profile]] = {
    "uniform": uniform,
    "cosine": cosine,
    "von_mises": von_mises,
}


def build_profile(spec: Mapping[str, Any]) -> Profile:
    """Build a profile from ``{"kind": name, **params}``."""
    params = dict(spec)
    kind = params.pop("kind", None)
    if kind not in PROFILES:
        raise ConfigError(f"unknown profile kind {kind!r} (choose from {sorted(PROFILES)})")
    try:
        return PROFILES[kind](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for profile {kind!r}: {exc}") from exc


def sample_density(grid: TorusGrid, profile: Profile) -> NDArray:
    """Sample a profile and rescale it to unit mass under the rectangle rule."""
    values = np.asarray(profile(grid.points()), dtype=float)
    mass = float(grid.integrate(values))
    if not mass > 0:
        raise ConfigError("m0 profile has nonpositive mass")
    return values / mass


def default_problem(nx: int = 128, nt: int = 128, horizon: float = 1.0, viscosity: float = 1.0,
                    dim: int = 1) -> MfgProblem:
    """
    The reference test problem.

    Quadratic cost with a cosine potential, cosine-bump initial density, one
    price component aggregated against ``sin(2 pi x_1)`` with gain 0.5 and a
    Gaussian-like unit-mass congestion kernel.
    """
    grid = TorusGrid(dim, nx, nt, horizon)
    potential = cosine(0.0, 0.25)
    cost = QuadraticPlus(1.0, lambda x, t: potential(x) + 0.0 * np.asarray(t))
    coupling = CouplingSpec.default(width=3.0, n_modes=16, price_base=0.1, price_gain=0.5)
    m0 = sample_density(grid, cosine(1.0, 0.5, shift=0.25))
    g = cosine(0.0, 0.2, shift=0.1)(grid.points())
    return MfgProblem(grid, cost, coupling, m0, g, viscosity)
