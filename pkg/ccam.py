"""Conditional channel attention: gate feature channels by a sym-parameter.

``CCAM(X, S) = X * sigmoid(MLP_m([MLP_e(S), AvgPool(X)]))`` where ``MLP_e``
embeds S to C values and ``MLP_m`` squeezes the 2C-long concatenation
through a ``ceil(C / r)`` bottleneck.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from sym_errors import DimensionError, UsageError
from sym_parameter import SymParameter
from tensor_core import Tensor, activation, channel_scale, concat, dense, global_avg_pool, mul, reshape

SymInput = Union[SymParameter, Tensor, np.ndarray, Sequence[float]]

DEFAULT_REDUCTION = 4


@dataclass
class AttentionMap:
    """Gate values, shaped ``1×1×C`` (or ``N×1×1×C`` for a batch)."""

    m: Tensor

    @property
    def values(self) -> np.ndarray:
        return self.m.numpy()

    def vector(self) -> np.ndarray:
        """Gates of the first (or only) sample as a flat length-C array."""
        return self.m.data.reshape(-1, self.m.shape[-1])[0].copy()


class CcamLayer:
    """Parameters of one conditional channel attention module."""

    def __init__(self, channels: int, k: int, reduction: int, params: Dict[str, Tensor]):
        if channels < 1 or k < 1 or reduction < 1:
            raise UsageError(f"channels, k and reduction must be >= 1, got {channels}, {k}, {reduction}")
        self.channels = channels
        self.k = k
        self.reduction = reduction
        self._params = params
        for name, shape in self.parameter_shapes().items():
            if name not in params or params[name].shape != shape:
                found = params[name].shape if name in params else None
                raise DimensionError(f"parameter '{name}' should have shape {shape}, found {found}")

    @property
    def bottleneck(self) -> int:
        return max(1, math.ceil(self.channels / self.reduction))

    @staticmethod
    def shapes_for(channels: int, k: int, reduction: int) -> Dict[str, Tuple[int, ...]]:
        hidden = max(1, math.ceil(channels / reduction))
        return {
            "embed.weight": (k, channels),
            "embed.bias": (channels,),
            "squeeze.weight": (2 * channels, hidden),
            "squeeze.bias": (hidden,),
            "excite.weight": (hidden, channels),
            "excite.bias": (channels,),
        }

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return self.shapes_for(self.channels, self.k, self.reduction)

    @classmethod
    def init(cls, channels: int, k: int, reduction: int = DEFAULT_REDUCTION,
             rng: Optional[np.random.Generator] = None) -> "CcamLayer":
        """Weights and biases uniform in ±1/sqrt(fan_in)."""
        if channels < 1 or k < 1 or reduction < 1:
            raise UsageError(f"channels, k and reduction must be >= 1, got {channels}, {k}, {reduction}")
        rng = rng if rng is not None else np.random.default_rng(0)
        shapes = cls.shapes_for(channels, k, reduction)
        params = {}
        for name, shape in shapes.items():
            fan_in = shapes[name.rsplit(".", 1)[0] + ".weight"][0]
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)
        return cls(channels, k, reduction, params)

    def parameters(self) -> Dict[str, Tensor]:
        return self._params

    def zero_parameters(self, prefix: str) -> None:
        """Zero every parameter whose name starts with ``prefix`` (e.g. ``"embed"``)."""
        for name, param in self._params.items():
            if name.startswith(prefix):
                param.assign(np.zeros(param.shape))


def _sym_rows(s: SymInput, k: Optional[int] = None) -> Tensor:
    """S as an ``N×k`` tensor; tensors pass through so gradients reach them."""
    if isinstance(s, SymParameter):
        s = s.as_tensor()
    elif not isinstance(s, Tensor):
        s = Tensor(np.asarray(s, dtype=np.float64))
    if s.ndim == 1:
        s = reshape(s, (1, s.shape[0]))
    if s.ndim != 2 or (k is not None and s.shape[1] != k):
        raise UsageError(f"expected S as a vector or N×{k or 'k'} matrix, got shape {list(s.shape)}")
    return s


def _check_features(x: Tensor) -> int:
    if x.ndim not in (3, 4):
        raise UsageError(f"expected H×W×C or N×H×W×C features, got shape {list(x.shape)}")
    return x.shape[0] if x.ndim == 4 else 1


def ccam_forward(layer: CcamLayer, x: Tensor, s: SymInput) -> Tuple[Tensor, AttentionMap]:
    """Gate the channels of ``x`` by S; returns the gated features and the attention map.

    ``x`` is ``H×W×C`` with one S, or ``N×H×W×C`` with one S row per sample
    (a single S is shared across the batch).
    """
    batch = _check_features(x)
    if x.shape[-1] != layer.channels:
        raise UsageError(f"layer has {layer.channels} channels, features have {x.shape[-1]}")
    rows = _sym_rows(s, layer.k)
    if rows.shape[0] not in (1, batch):
        raise UsageError(f"{rows.shape[0]} S rows for a batch of {batch}")
    p = layer.parameters()

    pooled = reshape(global_avg_pool(x), (batch, layer.channels))
    embedded = activation(dense(rows, p["embed.weight"], p["embed.bias"]), "relu")
    if embedded.shape[0] != batch:
        embedded = mul(embedded, Tensor(np.ones((batch, 1))))
    hidden = activation(dense(concat([embedded, pooled], axis=1), p["squeeze.weight"], p["squeeze.bias"]), "relu")
    gates = activation(dense(hidden, p["excite.weight"], p["excite.bias"]), "sigmoid")

    gate_shape = (batch, 1, 1, layer.channels) if x.ndim == 4 else (1, 1, layer.channels)
    m = reshape(gates, gate_shape)
    return channel_scale(x, m), AttentionMap(m)


def concat_inject(x: Tensor, s: SymInput) -> Tensor:
    """Append S as ``k`` constant planes: ``H×W×C`` -> ``H×W×(C+k)``."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    batch = _check_features(x)
    height, width = x.shape[-3], x.shape[-2]
    rows = _sym_rows(s)
    k = rows.shape[1]
    if x.ndim == 4:
        if rows.shape[0] not in (1, batch):
            raise UsageError(f"{rows.shape[0]} S rows for a batch of {batch}")
        planes = mul(Tensor(np.ones((batch, height, width, 1))), reshape(rows, (rows.shape[0], 1, 1, k)))
    else:
        if rows.shape[0] != 1:
            raise UsageError("unbatched features take a single S")
        planes = mul(Tensor(np.ones((height, width, 1))), reshape(rows, (1, 1, k)))
    return concat([x, planes], axis=-1)


@dataclass
class SensitivityTable:
    """One attention vector per S of a grid."""

    s_grid: List[SymParameter]
    maps: np.ndarray

    @property
    def channel_min(self) -> np.ndarray:
        return self.maps.min(axis=0)

    @property
    def channel_max(self) -> np.ndarray:
        return self.maps.max(axis=0)

    @property
    def spread(self) -> float:
        """Largest per-channel range of the gates across the grid."""
        return float((self.channel_max - self.channel_min).max())


def ccam_sensitivity(layer: CcamLayer, x: Tensor, s_grid: Sequence[SymParameter]) -> SensitivityTable:
    """Attention map of one feature map under every S in ``s_grid``."""
    if x.ndim != 3:
        raise UsageError(f"sensitivity is measured on one H×W×C feature map, got shape {list(x.shape)}")
    grid = list(s_grid)
    maps = np.stack([ccam_forward(layer, x, s)[1].vector() for s in grid]) if grid else np.zeros((0, layer.channels))
    return SensitivityTable(grid, maps)
