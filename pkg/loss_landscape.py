"""Weighted-loss surfaces over (input x, candidate output y) for a fixed S."""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from sym_errors import DomainError, UsageError
from sym_parameter import SymParameter, weighted_sum
from tensor_core import Tensor, bce_loss, mse_loss, scale
from toy_problem import BCE_SCALE, CLAMP_EPS, ToyModel, class_label, g

DEFAULT_POINTS = 201
DEFAULT_X_RANGE = (-1.0, 1.0)
DEFAULT_Y_RANGE = (0.0, 1.0)


@dataclass
class LossLandscape:
    """``values[i][j]`` is the loss of answering ``y_grid[j]`` at ``x_grid[i]``."""

    x_grid: np.ndarray
    y_grid: np.ndarray
    values: np.ndarray
    s: SymParameter
    overlay: Optional[np.ndarray] = None

    def argmin_y(self) -> np.ndarray:
        """Best candidate output for every x."""
        return self.y_grid[np.argmin(self.values, axis=1)]


def make_grid(points: int, bounds: Tuple[float, float]) -> np.ndarray:
    if points < 2:
        raise UsageError(f"a landscape axis needs at least 2 points, got {points}")
    low, high = bounds
    if not low < high:
        raise UsageError(f"grid bounds must be increasing, got {bounds}")
    return np.linspace(low, high, points)


def default_grids() -> Tuple[np.ndarray, np.ndarray]:
    return make_grid(DEFAULT_POINTS, DEFAULT_X_RANGE), make_grid(DEFAULT_POINTS, DEFAULT_Y_RANGE)


def term_landscapes(x_grid: np.ndarray, y_grid: np.ndarray, bce_scale: float = BCE_SCALE,
                    clamp_eps: float = CLAMP_EPS) -> Tuple[np.ndarray, np.ndarray]:
    """Unweighted regression and classification losses at every grid point."""
    x_grid = np.asarray(x_grid, dtype=np.float64)
    y_grid = np.asarray(y_grid, dtype=np.float64)
    for name, grid in (("x_grid", x_grid), ("y_grid", y_grid)):
        if grid.ndim != 1 or grid.size == 0:
            raise UsageError(f"{name} must be a non-empty 1-D array")
        if not np.all(np.isfinite(grid)):
            raise DomainError(f"{name} must be finite")
        if np.any(np.diff(grid) <= 0):
            raise UsageError(f"{name} must be strictly ascending")

    candidates = Tensor(np.broadcast_to(y_grid, (x_grid.size, y_grid.size)))
    regression_target = Tensor(np.broadcast_to(g(x_grid)[:, None], candidates.shape))
    class_target = Tensor(np.broadcast_to(class_label(x_grid)[:, None], candidates.shape))
    regression = mse_loss(candidates, regression_target, reduction="none")
    classification = scale(bce_loss(candidates, class_target, clamp_eps, reduction="none"), bce_scale)
    return regression.numpy(), classification.numpy()


def loss_landscape(s: SymParameter, x_grid: Optional[Sequence[float]] = None,
                   y_grid: Optional[Sequence[float]] = None, model: Optional[ToyModel] = None,
                   bce_scale: float = BCE_SCALE, clamp_eps: float = CLAMP_EPS) -> LossLandscape:
    """``s_1 (y - g(x))^2 + s_2 * bce_scale * BCE(y, y_c(x))`` on the grid, with ``f(x, S)`` overlaid when a model is given.

    ``s`` may be an unchecked sym-parameter to look at extrapolated weights.
    """
    if s.k != 2:
        raise UsageError(f"the toy landscape has two loss terms, got S with k={s.k}")
    default_x, default_y = default_grids()
    x_grid = default_x if x_grid is None else np.asarray(x_grid, dtype=np.float64)
    y_grid = default_y if y_grid is None else np.asarray(y_grid, dtype=np.float64)

    regression, classification = term_landscapes(x_grid, y_grid, bce_scale, clamp_eps)
    values = weighted_sum(s.values, [Tensor(regression), Tensor(classification)]).numpy()
    overlay = model.predict(x_grid, s) if model is not None else None
    return LossLandscape(x_grid=x_grid, y_grid=y_grid, values=values, s=s, overlay=overlay)


def to_gray_levels(values: np.ndarray, maxval: int = 255) -> np.ndarray:
    """Min-max normalise to integer gray levels; a flat grid maps to 0."""
    low, high = float(values.min()), float(values.max())
    if high == low:
        return np.zeros(values.shape, dtype=int)
    return np.rint((values - low) / (high - low) * maxval).astype(int)
