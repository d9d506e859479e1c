"""Central finite-difference checks for tape gradients."""

from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np

from tensor_core import Tape, Tensor, backward

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-6
DENOMINATOR_FLOOR = 1e-2


@dataclass
class GradientCheckResult:
    """Largest relative error per checked input."""

    name: str
    max_relative_error: Dict[str, float]
    tolerance: float

    @property
    def worst(self) -> float:
        return max(self.max_relative_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOMINATOR_FLOOR)
    return np.abs(analytic - numeric) / denominator


def numeric_gradient(fn: Callable[[], Tensor], tensor: Tensor, step: float = DEFAULT_STEP) -> np.ndarray:
    """d fn() / d tensor by central differences, evaluated outside any tape."""
    base = tensor.numpy()
    grad = np.zeros_like(base)
    for index in np.ndindex(base.shape):
        original = base[index]
        base[index] = original + step
        tensor.assign(base)
        upper = fn().item()
        base[index] = original - step
        tensor.assign(base)
        lower = fn().item()
        base[index] = original
        grad[index] = (upper - lower) / (2.0 * step)
    tensor.assign(base)
    return grad


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Dict[str, Tensor],
    name: str = "check",
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradientCheckResult:
    """Compare tape gradients of the scalar ``fn()`` against finite differences.

    ``fn`` must rebuild its graph from the given input tensors on every call.
    """
    for tensor in inputs.values():
        tensor.requires_grad = True
        tensor.zero_grad()
    with Tape():
        loss = fn()
    backward(loss)
    analytic = {key: (tensor.grad.copy() if tensor.grad is not None else np.zeros(tensor.shape))
                for key, tensor in inputs.items()}

    errors = {}
    for key, tensor in inputs.items():
        numeric = numeric_gradient(fn, tensor, step)
        errors[key] = float(relative_error(analytic[key], numeric).max(initial=0.0))
    return GradientCheckResult(name=name, max_relative_error=errors, tolerance=tolerance)


def random_inputs(rng: np.random.Generator, shapes: Dict[str, Sequence[int]], low: float = -2.0,
                  high: float = 2.0) -> Dict[str, Tensor]:
    return {key: Tensor(rng.uniform(low, high, size=tuple(shape)), requires_grad=True)
            for key, shape in shapes.items()}
