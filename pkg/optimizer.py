"""Adam with bias-corrected moment estimates."""

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from sym_errors import DimensionError, UsageError
from tensor_core import Tensor

DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment buffers per named parameter and the step counter."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "m": {name: buf.ravel().tolist() for name, buf in self.m.items()},
            "v": {name: buf.ravel().tolist() for name, buf in self.v.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping, shapes: Mapping[str, tuple]) -> "AdamState":
        state = cls(step=int(data["step"]))
        for key, target in (("m", state.m), ("v", state.v)):
            for name, values in data[key].items():
                if name not in shapes:
                    raise DimensionError(f"optimizer state for unknown parameter '{name}'")
                array = np.array(values, dtype=np.float64)
                if array.size != int(np.prod(shapes[name])):
                    raise DimensionError(f"optimizer state for '{name}' has {array.size} values")
                target[name] = array.reshape(shapes[name])
        return state


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = DEFAULT_BETA1,
    beta2: float = DEFAULT_BETA2,
    eps: float = DEFAULT_EPS,
) -> AdamState:
    """Apply one Adam update to ``params`` in place and advance ``state``."""
    if lr <= 0:
        raise UsageError(f"learning rate must be positive, got {lr}")
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros(param.shape)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise DimensionError(f"gradient for '{name}' has shape {grad.shape}, parameter has {param.shape}")

        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(param.shape)
            v = np.zeros(param.shape)
        elif m.shape != param.shape:
            raise DimensionError(f"moment buffers for '{name}' have shape {m.shape}, parameter has {param.shape}")

        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v

        m_hat = m / correction1
        v_hat = v / correction2
        param.assign(param.data - lr * m_hat / (np.sqrt(v_hat) + eps))
    return state


class AdamOptimizer:
    """Adam over a fixed set of named parameters."""

    def __init__(self, params: Mapping[str, Tensor], beta1: float = DEFAULT_BETA1,
                 beta2: float = DEFAULT_BETA2, eps: float = DEFAULT_EPS, state: AdamState = None):
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = state if state is not None else AdamState()

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def step(self, lr: float) -> None:
        grads = {name: param.grad for name, param in self.params.items() if param.grad is not None}
        adam_step(self.params, grads, self.state, lr, self.beta1, self.beta2, self.eps)
