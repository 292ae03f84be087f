# FILE: test_grid.py

import numpy as np
import pytest

from src.grid import (BOUNDED, COMPOSED, DIRECT, PERIODIC, Grid, GridResolutionError, SampledField, StencilSet,
                      evaluate_sympy, fd_weights)


def test_grid_spacing_and_weights():
    bounded = Grid(0.0, 1.0, 5, BOUNDED)
    assert bounded.h == pytest.approx(0.25)
    np.testing.assert_allclose(bounded.points, [0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(bounded.weights(), [0.125, 0.25, 0.25, 0.25, 0.125])
    periodic = Grid(0.0, 1.0, 4, PERIODIC)
    np.testing.assert_allclose(periodic.points, [0, 0.25, 0.5, 0.75])
    assert periodic.integrate(np.ones(4)) == pytest.approx(1.0)


def test_grid_validation():
    with pytest.raises(GridResolutionError):
        Grid(0.0, 1.0, 3)
    with pytest.raises(ValueError):
        Grid(0.0, 1.0, 10, 'dirichlet')
    with pytest.raises(ValueError):
        Grid(1.0, 1.0, 10)


def test_fd_weights():
    np.testing.assert_allclose(fd_weights([-1, 0, 1], 1), [-0.5, 0.0, 0.5], atol=1e-14)
    np.testing.assert_allclose(fd_weights([-1, 0, 1], 2), [1.0, -2.0, 1.0], atol=1e-13)
    np.testing.assert_allclose(fd_weights([0, 1, 2], 1), [-1.5, 2.0, -0.5], atol=1e-13)
    with pytest.raises(GridResolutionError):
        fd_weights([0, 1], 2)


def test_bounded_stencils_exact_on_quadratics():
    grid = Grid(-1.0, 2.0, 21, BOUNDED)
    stencils = StencilSet(grid)
    assert stencils.mode == DIRECT
    z = grid.points
    np.testing.assert_allclose(stencils.apply(1, z ** 2), 2 * z, atol=1e-10)
    np.testing.assert_allclose(stencils.apply(2, z ** 3), 6 * z, atol=1e-8)
    idx_a, w_a, idx_b, w_b = stencils.trace_weights(1)
    assert w_a @ (z ** 2)[idx_a] == pytest.approx(-2.0)
    assert w_b @ (z ** 2)[idx_b] == pytest.approx(4.0)


def test_stencil_options():
    with pytest.raises(ValueError):
        StencilSet(Grid(0.0, 1.0, 20, BOUNDED), accuracy=4)
    with pytest.raises(ValueError):
        StencilSet(Grid(0.0, 1.0, 20, PERIODIC), accuracy=3)
    with pytest.raises(ValueError):
        StencilSet(Grid(0.0, 1.0, 20, PERIODIC), mode='spectral')
    with pytest.raises(GridResolutionError):
        StencilSet(Grid(0.0, 1.0, 6, BOUNDED)).derivative(2)


def test_composed_mode_is_repeated_first_derivative():
    stencils = StencilSet(Grid(0.0, 1.0, 16, PERIODIC))
    assert stencils.mode == COMPOSED
    D1 = stencils.derivative(1).toarray()
    np.testing.assert_allclose(stencils.derivative(3).toarray(), D1 @ D1 @ D1, atol=1e-9)


@pytest.mark.parametrize('accuracy', [2, 4])
def test_periodic_convergence(accuracy):
    errors = []
    for N in (32, 64):
        grid = Grid(0.0, 1.0, N, PERIODIC)
        z = grid.points
        du = StencilSet(grid, accuracy).apply(1, np.sin(2 * np.pi * z))
        errors.append(np.max(np.abs(du - 2 * np.pi * np.cos(2 * np.pi * z))))
    assert np.log2(errors[0] / errors[1]) > accuracy - 0.2


def test_sampled_field_from_sympy():
    grid = Grid(0.0, 1.0, 11, BOUNDED)
    field = SampledField.from_sympy(['z**3', '2'], grid, 2)
    assert (field.n, field.max_order) == (2, 2)
    np.testing.assert_allclose(field.jet(1, 2), 6 * grid.points)
    np.testing.assert_allclose(field.jet(2, 0), np.full(11, 2.0))
    with pytest.raises(GridResolutionError):
        field.jet(1, 3)
    with pytest.raises(IndexError):
        field.jet(3, 0)
    doubled = 2 * field
    np.testing.assert_allclose(doubled.values, 2 * field.values)


def test_sampled_field_from_values():
    grid = Grid(0.0, 1.0, 11, BOUNDED)
    field = SampledField.from_values(grid.points ** 2, StencilSet(grid), 1)
    np.testing.assert_allclose(field.jet(1, 1), 2 * grid.points, atol=1e-10)
    with pytest.raises(ValueError):
        SampledField(grid, np.zeros((1, 2, 5)))


def test_evaluate_sympy_broadcasts_constants():
    out = evaluate_sympy('3', np.linspace(0, 1, 4))
    np.testing.assert_array_equal(out, np.full(4, 3.0))
