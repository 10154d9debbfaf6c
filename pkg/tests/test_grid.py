from __future__ import annotations

import numpy as np
import pytest

from mfg_gcg.errors import ConfigError
from mfg_gcg.grid import ScalarField, TorusGrid, VectorField, divergence, gradient, integrate_space


def field_from_profile(grid, profile):
    return ScalarField.constant_in_time(grid, profile(grid.points()[..., 0]))


def test_grid_spacing_is_exact():
    grid = TorusGrid(1, 48, 20, horizon=2.5)
    assert grid.nx * grid.dx == 1.0
    assert grid.nt * grid.dt == 2.5


@pytest.mark.parametrize("i", [-5, 0, 3, 17])
def test_index_is_periodic(i):
    grid = TorusGrid(2, 16, 4)
    assert grid.index(i + grid.nx) == grid.index(i)


@pytest.mark.parametrize("kwargs", [dict(dim=3, nx=8, nt=4), dict(dim=1, nx=3, nt=4),
                                    dict(dim=1, nx=8, nt=1), dict(dim=1, nx=8, nt=4, horizon=0.0)])
def test_grid_rejects_bad_sizes(kwargs):
    with pytest.raises(ConfigError):
        TorusGrid(**kwargs)


def test_field_shapes_and_finiteness():
    grid = TorusGrid(2, 8, 3)
    assert ScalarField(grid, np.zeros(grid.scalar_shape)).values.size == 4 * 64
    assert VectorField.zeros(grid).values.size == 2 * 4 * 64
    with pytest.raises(ConfigError):
        ScalarField(grid, np.zeros((4, 8)))
    bad = np.zeros(grid.scalar_shape)
    bad[1, 2, 3] = np.nan
    with pytest.raises(ConfigError):
        ScalarField(grid, bad)


def test_fields_are_immutable():
    grid = TorusGrid(1, 8, 3)
    source = np.zeros(grid.scalar_shape)
    f = ScalarField(grid, source)
    source[0, 0] = 5.0
    assert f.values[0, 0] == 0.0
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


@pytest.mark.parametrize("nx", [4, 7, 32])
def test_integrate_constant(nx):
    grid = TorusGrid(1, nx, 2)
    assert integrate_space(ScalarField(grid, np.ones(grid.scalar_shape)), 0) == pytest.approx(1.0, abs=1e-15)


def test_integrate_sine_vanishes():
    grid = TorusGrid(1, 64, 2)
    f = field_from_profile(grid, lambda x: np.sin(2 * np.pi * x))
    assert abs(integrate_space(f, 1)) <= 1e-14


def test_integrate_cosine_bump():
    grid = TorusGrid(1, 32, 2)
    f = field_from_profile(grid, lambda x: 1 + 0.5 * np.cos(2 * np.pi * x))
    assert integrate_space(f, 2) == pytest.approx(1.0, abs=1e-14)


def test_integrate_two_dimensional():
    grid = TorusGrid(2, 16, 2)
    x = grid.points()
    vals = 1 + np.cos(2 * np.pi * x[..., 0]) * np.sin(2 * np.pi * x[..., 1])
    assert integrate_space(ScalarField.constant_in_time(grid, vals), 0) == pytest.approx(1.0, abs=1e-14)


def test_integrate_rejects_bad_level():
    grid = TorusGrid(1, 8, 3)
    f = ScalarField(grid, np.ones(grid.scalar_shape))
    with pytest.raises(IndexError):
        integrate_space(f, 4)
    with pytest.raises(IndexError):
        integrate_space(f, -1)


def test_gradient_of_constant_is_zero():
    grid = TorusGrid(2, 8, 2)
    g = gradient(ScalarField(grid, np.full(grid.scalar_shape, 3.0)), 1)
    assert g.shape == (2, 8, 8)
    assert np.all(g == 0.0)


def test_gradient_symbol_of_cosine():
    grid = TorusGrid(1, 64, 2)
    x = grid.axis()
    g = gradient(field_from_profile(grid, lambda x: np.cos(2 * np.pi * x)), 0)[0]
    expected = -np.sin(2 * np.pi * x) * np.sin(2 * np.pi * grid.dx) / grid.dx
    assert np.max(np.abs(g - expected)) <= 1e-12


def test_gradient_of_sawtooth_shows_seam():
    grid = TorusGrid(1, 16, 2)
    g = gradient(field_from_profile(grid, lambda x: np.mod(x, 1.0)), 0)[0]
    assert np.allclose(g[1:-1], 1.0, atol=1e-12)
    # both seam nodes see a jump of -1 across a 2*dx stencil
    assert g[0] == pytest.approx(1 - grid.nx / 2, abs=1e-12)
    assert g[-1] == pytest.approx(1 - grid.nx / 2, abs=1e-12)


def test_divergence_of_constant_is_zero():
    grid = TorusGrid(2, 8, 2)
    w = VectorField(grid, np.full(grid.vector_shape, 0.7))
    assert np.max(np.abs(divergence(w, 0))) <= 1e-15


def test_divergence_of_sine_uses_gradient_symbol():
    grid = TorusGrid(1, 32, 2)
    x = grid.axis()
    w = np.broadcast_to(np.sin(2 * np.pi * x), grid.vector_shape)
    d = divergence(VectorField(grid, w), 1)
    expected = np.cos(2 * np.pi * x) * np.sin(2 * np.pi * grid.dx) / grid.dx
    assert np.max(np.abs(d - expected)) <= 1e-12


@pytest.mark.parametrize("dim,nx", [(1, 4), (1, 33), (1, 128), (2, 5), (2, 16)])
def test_summation_by_parts(dim, nx, rng):
    grid = TorusGrid(dim, nx, 2)
    for _ in range(100):
        u = rng.standard_normal(grid.space_shape)
        w = rng.standard_normal((dim, *grid.space_shape))
        lhs = grid.inner(u, grid.div(w))
        rhs = -grid.inner(grid.grad(u), w)
        scale = max(1.0, abs(lhs), abs(rhs))
        assert abs(lhs - rhs) <= 1e-12 * scale


@pytest.mark.parametrize("dim", [1, 2])
def test_diffusion_solve_inverts_operator(dim, rng):
    grid = TorusGrid(dim, 16, 2)
    rhs = rng.standard_normal((3, *grid.space_shape))
    u = grid.solve_diffusion(rhs, 0.01)
    back = u + 0.01 * grid.neg_laplacian(u)
    assert np.max(np.abs(back - rhs)) <= 1e-12


def test_laplacian_symbol_matches_stencil():
    grid = TorusGrid(1, 32, 2)
    u = np.cos(2 * np.pi * 3 * grid.axis())
    lam = (2 / grid.dx**2) * (1 - np.cos(2 * np.pi * 3 * grid.dx))
    assert np.max(np.abs(grid.neg_laplacian(u) - lam * u)) <= 1e-9
