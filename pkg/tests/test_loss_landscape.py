import numpy as np
import pytest

from loss_landscape import (DEFAULT_POINTS, default_grids, loss_landscape, make_grid, term_landscapes,
                            to_gray_levels)
from sym_errors import UsageError
from sym_parameter import SymParameter
from toy_problem import build_model, g


@pytest.fixture
def grids():
    return make_grid(41, (-1.0, 1.0)), make_grid(51, (0.0, 1.0))


def test_default_grids():
    x_grid, y_grid = default_grids()
    assert len(x_grid) == len(y_grid) == DEFAULT_POINTS
    assert x_grid[0] == -1.0 and x_grid[-1] == 1.0
    assert y_grid[0] == 0.0 and y_grid[-1] == 1.0


def test_regression_only_minimum_tracks_g(grids):
    x_grid, y_grid = grids
    landscape = loss_landscape(SymParameter((1.0, 0.0)), x_grid, y_grid)
    nearest = y_grid[np.argmin(np.abs(y_grid[None, :] - g(x_grid)[:, None]), axis=1)]
    np.testing.assert_array_equal(landscape.argmin_y(), nearest)


def test_classification_only_is_monotone_for_positive_labels(grids):
    x_grid, y_grid = grids
    landscape = loss_landscape(SymParameter((0.0, 1.0)), x_grid, y_grid)
    positive = np.where(g(x_grid) < -0.1 * x_grid + 0.5)[0]
    assert positive.size > 0
    for i in positive:
        assert np.all(np.diff(landscape.values[i]) < 0.0)
    negative = np.where(g(x_grid) >= -0.1 * x_grid + 0.5)[0]
    for i in negative:
        assert np.all(np.diff(landscape.values[i]) > 0.0)


def test_balanced_landscape_is_mean_of_one_hot_landscapes(grids):
    x_grid, y_grid = grids
    regression = loss_landscape(SymParameter((1.0, 0.0)), x_grid, y_grid).values
    classification = loss_landscape(SymParameter((0.0, 1.0)), x_grid, y_grid).values
    balanced = loss_landscape(SymParameter((0.5, 0.5)), x_grid, y_grid).values
    assert np.max(np.abs(balanced - 0.5 * (regression + classification))) < 1e-12


def test_linear_in_s_for_random_weights(rng, grids):
    x_grid, y_grid = grids
    regression, classification = term_landscapes(x_grid, y_grid)
    for _ in range(10):
        s = rng.dirichlet((1.0, 1.0))
        values = loss_landscape(SymParameter(tuple(s)), x_grid, y_grid).values
        assert np.max(np.abs(values - (s[0] * regression + s[1] * classification))) < 1e-12


def test_values_are_finite_on_clamped_domain(grids):
    x_grid, y_grid = grids
    assert np.all(np.isfinite(loss_landscape(SymParameter((0.5, 0.5)), x_grid, y_grid).values))


def test_extrapolated_weights_are_allowed(grids):
    x_grid, y_grid = grids
    landscape = loss_landscape(SymParameter.unchecked((0.0, 1.5)), x_grid, y_grid)
    classification = loss_landscape(SymParameter((0.0, 1.0)), x_grid, y_grid).values
    np.testing.assert_allclose(landscape.values, 1.5 * classification, rtol=1e-12)


def test_overlay_comes_from_the_model(grids):
    x_grid, y_grid = grids
    model = build_model("sym", 0, width=8)
    s = SymParameter((0.25, 0.75))
    landscape = loss_landscape(s, x_grid, y_grid, model=model)
    assert landscape.overlay.shape == x_grid.shape
    np.testing.assert_array_equal(landscape.overlay, model.predict(x_grid, s))
    assert loss_landscape(s, x_grid, y_grid).overlay is None


def test_needs_two_terms():
    with pytest.raises(UsageError):
        loss_landscape(SymParameter((0.2, 0.3, 0.5)))


@pytest.mark.parametrize("points, bounds", [(1, (0.0, 1.0)), (5, (1.0, 1.0)), (5, (1.0, 0.0))])
def test_invalid_grids(points, bounds):
    with pytest.raises(UsageError):
        make_grid(points, bounds)


def test_descending_grid_is_rejected():
    with pytest.raises(UsageError):
        term_landscapes(np.array([0.5, 0.0]), np.array([0.0, 1.0]))


def test_gray_levels():
    levels = to_gray_levels(np.array([[0.0, 0.5], [1.0, 2.0]]))
    np.testing.assert_array_equal(levels, [[0, 64], [128, 255]])
    np.testing.assert_array_equal(to_gray_levels(np.full((2, 3), 7.0)), np.zeros((2, 3)))
