"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Ops executed inside an active :class:`Tape` are recorded in execution order
together with a closure that maps the output gradient to input gradients.
Ops executed outside a tape are plain numpy computations (inference mode).

Typical use::

    with Tape() as tape:
        loss = mse_loss(dense(x, W, b), y)
    backward(loss)
    W.grad
"""

import contextvars
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from sym_errors import DimensionError, DomainError, NumericalError, UsageError

ArrayLike = Union[np.ndarray, Sequence[float], float]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

ACTIVATIONS = ("relu", "sigmoid", "tanh")
REDUCTIONS = ("mean", "none")
_SIGMOID_LOW = np.finfo(np.float64).tiny
_SIGMOID_HIGH = np.nextafter(1.0, 0.0)

_ACTIVE_TAPE: contextvars.ContextVar = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    """An n-dimensional float64 array that can take part in a tape.

    The value buffer is read-only; only ``grad`` changes after construction,
    apart from :meth:`assign`, which optimizers use to write new parameter
    values.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        array = np.array(data, dtype=np.float64)
        array.setflags(write=False)
        self._data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional["Tape"] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        tensor = cls.__new__(cls)
        array = np.ascontiguousarray(array, dtype=np.float64)
        array.setflags(write=False)
        tensor._data = array
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor._tape = None
        return tensor

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        """Return the value of a single-element tensor."""
        if self._data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self._data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the values."""
        return self._data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def assign(self, values: ArrayLike) -> None:
        """Replace the values in place of an optimizer step (single writer)."""
        array = np.array(values, dtype=np.float64)
        if array.shape != self.shape:
            raise DimensionError(f"cannot assign shape {array.shape} to tensor of shape {self.shape}")
        array.setflags(write=False)
        self._data = array

    def detach(self) -> "Tensor":
        return Tensor._wrap(self._data)

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"


class TapeRecord:
    """One executed op: its inputs, its output and its backward closure."""

    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of the ops of one forward pass.

    Records are appended as ops execute, so every op's inputs precede it.
    A tape supports a single backward pass; :meth:`reset` clears it for a new
    forward pass.
    """

    def __init__(self):
        self.records: List[TapeRecord] = []
        self.consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn) -> None:
        if self.consumed:
            raise UsageError("cannot record on a tape whose backward pass already ran; call reset() first")
        output._tape = self
        self.records.append(TapeRecord(op, inputs, output, backward_fn))

    def reset(self) -> None:
        """Drop all records so the tape can host a fresh forward pass."""
        self.records = []
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every tensor that contributes to ``loss``."""
        if loss.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
        if loss._tape is not self:
            raise UsageError("loss was not produced on this tape")
        if self.consumed:
            raise UsageError("backward already ran on this tape; call reset() and run a new forward pass")
        self.consumed = True

        # Walk the records newest first, pushing gradients to their inputs
        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = set()
        for record in reversed(self.records):
            produced.add(id(record.output))
            grad_out = grads.pop(id(record.output), None)
            if grad_out is None:
                continue
            record.output.grad = grad_out
            for tensor, grad_in in zip(record.inputs, record.backward(grad_out)):
                if grad_in is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + grad_in if key in grads else grad_in

        # Leaves accumulate; a leaf the loss does not depend on gets zeros
        seen = set()
        for record in self.records:
            for tensor in record.inputs:
                key = id(tensor)
                if not tensor.requires_grad or key in produced or key in seen:
                    continue
                seen.add(key)
                grad = grads.get(key)
                if grad is None:
                    grad = np.zeros_like(tensor.data)
                tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced non-finite values")
    tape = _ACTIVE_TAPE.get()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=tracked)
    if tracked:
        tape.record(op, inputs, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shapes(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes("add", a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.data + b.data, (a, b), _backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes("sub", a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", a.data - b.data, (a, b), _backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes("mul", a, b)

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result("mul", a.data * b.data, (a, b), _backward)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant that does not take part in differentiation."""
    factor = float(factor)

    def _backward(g):
        return (g * factor,)

    return _result("scale", x.data * factor, (x,), _backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(d) for d in shape)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {list(x.shape)} to {list(shape)}") from None

    def _backward(g):
        return (g.reshape(x.shape),)

    return _result("reshape", data, (x,), _backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise UsageError("concat needs at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result("concat", data, tensors, _backward)


def reduce_sum(x: Tensor) -> Tensor:
    def _backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result("reduce_sum", np.asarray(x.data.sum()), (x,), _backward)


def mean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise DimensionError("mean of an empty tensor")
    n = x.size

    def _backward(g):
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _result("mean", np.asarray(x.data.mean()), (x,), _backward)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    """Clamp into [low, high]; the gradient is zero where the clamp is active."""
    inside = (x.data >= low) & (x.data <= high)

    def _backward(g):
        return (g * inside,)

    return _result("clip", np.clip(x.data, low, high), (x,), _backward)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")

    def _backward(g):
        return (g / x.data,)

    return _result("log", np.log(x.data), (x,), _backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")

    def _backward(g):
        return g @ b.data.T, a.data.T @ g

    return _result("matmul", a.data @ b.data, (a, b), _backward)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine layer ``x @ weight + bias`` for a batch of row vectors."""
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise DimensionError(
            f"dense: expected x[b×n], W[n×m], bias[m], got {list(x.shape)}, {list(weight.shape)}, {list(bias.shape)}"
        )
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise DimensionError(
            f"dense: shapes {list(x.shape)}, {list(weight.shape)}, {list(bias.shape)} do not agree"
        )

    def _backward(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return _result("dense", x.data @ weight.data + bias.data, (x, weight, bias), _backward)


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise relu, sigmoid or tanh."""
    if kind == "relu":
        active = x.data > 0
        out = np.where(active, x.data, 0.0)

        def _backward(g):
            return (g * active,)

    elif kind == "sigmoid":
        # Strictly inside (0, 1) even where expit rounds to 0 or 1
        out = np.clip(expit(x.data), _SIGMOID_LOW, _SIGMOID_HIGH)

        def _backward(g):
            return (g * out * (1.0 - out),)

    elif kind == "tanh":
        out = np.tanh(x.data)

        def _backward(g):
            return (g * (1.0 - out * out),)

    else:
        raise UsageError(f"unknown activation '{kind}', expected one of {ACTIVATIONS}")

    return _result(kind, out, (x,), _backward)


def _check_feature_map(op: str, x: Tensor) -> None:
    if x.ndim not in (3, 4):
        raise DimensionError(f"{op}: expected H×W×C or N×H×W×C features, got shape {list(x.shape)}")


def global_avg_pool(features: Tensor) -> Tensor:
    """Per-channel spatial mean: H×W×C -> 1×1×C (batched: N×H×W×C -> N×1×1×C)."""
    _check_feature_map("global_avg_pool", features)
    height, width = features.shape[-3], features.shape[-2]
    if height < 1 or width < 1:
        raise DimensionError(f"global_avg_pool: empty spatial extent {height}×{width}")
    count = height * width

    def _backward(g):
        return (np.broadcast_to(g / count, features.shape).copy(),)

    return _result("global_avg_pool", features.data.mean(axis=(-3, -2), keepdims=True), (features,), _backward)


def channel_scale(features: Tensor, gates: Tensor) -> Tensor:
    """Multiply every channel plane of ``features`` by the matching gate."""
    _check_feature_map("channel_scale", features)
    expected = features.shape[:-3] + (1, 1, features.shape[-1])
    if gates.shape != expected:
        raise DimensionError(f"channel_scale: gates {list(gates.shape)} do not match features {list(features.shape)}")

    def _backward(g):
        return g * gates.data, (g * features.data).sum(axis=(-3, -2), keepdims=True)

    return _result("channel_scale", features.data * gates.data, (features, gates), _backward)


def _reduce(op: str, values: np.ndarray, reduction: str) -> Tuple[np.ndarray, float]:
    if reduction == "mean":
        if values.size == 0:
            raise DimensionError(f"{op}: empty input")
        return np.asarray(values.mean()), 1.0 / values.size
    if reduction == "none":
        return values, 1.0
    raise UsageError(f"{op}: unknown reduction '{reduction}', expected one of {REDUCTIONS}")


def mse_loss(pred: Tensor, target: Tensor, reduction: str = "mean") -> Tensor:
    """Squared error, averaged over all elements unless ``reduction='none'``."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: pred {list(pred.shape)} vs target {list(target.shape)}")
    diff = pred.data - target.data
    out, factor = _reduce("mse_loss", diff * diff, reduction)

    def _backward(g):
        grad = 2.0 * diff * g * factor
        return grad, -grad

    return _result("mse_loss", out, (pred, target), _backward)


def bce_loss(pred: Tensor, target: Tensor, clamp_eps: float = 1e-6, reduction: str = "mean") -> Tensor:
    """Binary cross entropy of a raw prediction clamped into [eps, 1 - eps]."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"bce_loss: pred {list(pred.shape)} vs target {list(target.shape)}")
    if not 0.0 < clamp_eps < 0.5:
        raise UsageError(f"bce_loss: clamp_eps must lie in (0, 0.5), got {clamp_eps}")
    t = target.data
    if not np.all((t == 0.0) | (t == 1.0)):
        raise DomainError("bce_loss: targets must be 0 or 1")
    p = np.clip(pred.data, clamp_eps, 1.0 - clamp_eps)
    inside = (pred.data >= clamp_eps) & (pred.data <= 1.0 - clamp_eps)
    # Clamped on the side away from the label: pull back along (pred - t)^2 / 2
    wrong_side = ~inside & ((pred.data < clamp_eps) == (t == 1.0))
    values = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    out, factor = _reduce("bce_loss", values, reduction)

    def _backward(g):
        grad = np.where(inside, (1.0 - t) / (1.0 - p) - t / p, np.where(wrong_side, pred.data - t, 0.0))
        return g * factor * grad, None

    return _result("bce_loss", out, (pred, target), _backward)


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss."""
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if loss._tape is None:
        raise UsageError("loss was not produced on an active tape")
    loss._tape.backward(loss)
