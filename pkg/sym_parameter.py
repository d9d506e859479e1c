"""Sym-parameters: simplex vectors that are both a model input and loss weights.

A sym-parameter ``S = (s_1, ..., s_k)`` with ``s_i >= 0`` and ``sum(s_i) == 1``
weights ``k`` loss terms, ``L(f, S) = sum_i s_i * L_i``, while the same vector
is fed to the model as a condition. During training ``S`` is drawn from a
Dirichlet distribution with concentration vector ``alpha``.
"""

from dataclasses import dataclass
from typing import Callable, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, xlogy

from sym_errors import DomainError, UsageError
from tensor_core import Tensor, add, mean, mul, scale

SIMPLEX_TOLERANCE = 1e-9

LossFn = Callable[[Tensor, Tensor, str], Tensor]


@dataclass(frozen=True)
class SymParameter:
    """A point ``S`` on the probability simplex.

    Use :meth:`unchecked` for inference-only extrapolation values such as
    ``(0.0, 1.5, 0.0)``; those skip the simplex constraint.
    """

    values: Tuple[float, ...]
    extrapolated: bool = False

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if not values:
            raise UsageError("a sym-parameter needs at least one entry")
        if not all(np.isfinite(values)):
            raise DomainError(f"sym-parameter entries must be finite, got {values}")
        if self.extrapolated:
            return
        if any(v < 0.0 for v in values):
            raise DomainError(f"sym-parameter entries must be non-negative, got {values}")
        if abs(sum(values) - 1.0) > SIMPLEX_TOLERANCE:
            raise DomainError(f"sym-parameter entries must sum to 1, got sum {sum(values)!r}")

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "SymParameter":
        """Checked constructor from any sequence of numbers."""
        return cls(tuple(values))

    @classmethod
    def unchecked(cls, values: Sequence[float]) -> "SymParameter":
        return cls(tuple(values), extrapolated=True)

    @classmethod
    def one_hot(cls, k: int, index: int) -> "SymParameter":
        if not 0 <= index < k:
            raise UsageError(f"one-hot index {index} out of range for k={k}")
        return cls(tuple(1.0 if i == index else 0.0 for i in range(k)))

    @property
    def k(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)

    def as_tensor(self, requires_grad: bool = False) -> Tensor:
        return Tensor(self.values, requires_grad=requires_grad)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, index: int) -> float:
        return self.values[index]

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Concentration:
    """Dirichlet concentration vector; every entry strictly positive."""

    alpha: Tuple[float, ...]

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.alpha)
        object.__setattr__(self, "alpha", alpha)
        if not alpha:
            raise DomainError("concentration vector must not be empty")
        if not all(np.isfinite(a) and a > 0.0 for a in alpha):
            raise DomainError(f"concentration entries must be finite and > 0, got {alpha}")

    @property
    def k(self) -> int:
        return len(self.alpha)

    def as_array(self) -> np.ndarray:
        return np.array(self.alpha, dtype=np.float64)

    def mean(self) -> np.ndarray:
        alpha = self.as_array()
        return alpha / alpha.sum()

    def variance(self) -> np.ndarray:
        alpha = self.as_array()
        total = alpha.sum()
        return alpha * (total - alpha) / (total * total * (total + 1.0))


def _log_gamma_variates(shape: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Logs of ``n`` Gamma(shape, 1) draws by the Marsaglia-Tsang squeeze method.

    For ``shape < 1`` a Gamma(shape + 1) draw is boosted by ``U ** (1 / shape)``;
    working in log space keeps tiny shapes from underflowing to zero.
    """
    boosted = shape < 1.0
    a = shape + 1.0 if boosted else shape
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)

    out = np.empty(n)
    pending = np.arange(n)
    while pending.size:
        x = rng.standard_normal(pending.size)
        u = 1.0 - rng.random(pending.size)
        v = (1.0 + c * x) ** 3
        positive = v > 0.0
        safe_v = np.where(positive, v, 1.0)
        squeeze = u < 1.0 - 0.0331 * x ** 4
        full = np.log(u) < 0.5 * x * x + d * (1.0 - safe_v + np.log(safe_v))
        accepted = positive & (squeeze | full)
        out[pending[accepted]] = np.log(d) + np.log(safe_v[accepted])
        pending = pending[~accepted]

    if boosted:
        out += np.log(1.0 - rng.random(n)) / shape
    return out


def sample_dirichlet_batch(alpha: Concentration, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` Dirichlet(alpha) draws as an ``n × k`` array of simplex rows."""
    if n < 0:
        raise UsageError(f"number of draws must be non-negative, got {n}")
    log_gammas = np.column_stack([_log_gamma_variates(a, n, rng) for a in alpha.alpha])
    # Shift each row by its max before exponentiating
    log_gammas -= log_gammas.max(axis=1, keepdims=True)
    gammas = np.exp(log_gammas)
    return gammas / gammas.sum(axis=1, keepdims=True)


def sample_dirichlet(alpha: Concentration, rng: np.random.Generator) -> SymParameter:
    """One draw S ~ Dirichlet(alpha): independent Gamma(alpha_i, 1) variates, normalized."""
    return SymParameter(tuple(sample_dirichlet_batch(alpha, rng, 1)[0]))


def dirichlet_log_pdf(s: SymParameter, alpha: Concentration) -> float:
    """Log density ``-log B(alpha) + sum_i (alpha_i - 1) log s_i``."""
    if s.k != alpha.k:
        raise UsageError(f"sym-parameter has k={s.k} but concentration has k={alpha.k}")
    if s.extrapolated:
        raise DomainError("log density is only defined on the simplex")
    values, a = s.as_array(), alpha.as_array()
    on_boundary = values == 0.0
    if np.any(on_boundary & (a < 1.0)):
        raise DomainError("density diverges on the simplex boundary where alpha_i < 1")
    log_norm = np.sum(gammaln(a)) - gammaln(np.sum(a))
    return float(np.sum(xlogy(a - 1.0, values)) - log_norm)


@dataclass(frozen=True)
class LossTerm:
    """A named loss ``fn(outputs, target, reduction)``."""

    name: str
    fn: LossFn


class WeightedObjective:
    """Ordered loss terms combined as ``sum_i s_i * L_i``."""

    def __init__(self, terms: Sequence[Tuple[str, LossFn]]):
        if not terms:
            raise UsageError("an objective needs at least one loss term")
        names = [name for name, _ in terms]
        if len(set(names)) != len(names):
            raise UsageError(f"loss term names must be unique, got {names}")
        self.terms: List[LossTerm] = [LossTerm(name, fn) for name, fn in terms]

    @property
    def k(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> List[str]:
        return [term.name for term in self.terms]

    def term_losses(self, outputs: Tensor, targets: Mapping[str, Tensor], reduction: str = "mean") -> List[Tensor]:
        missing = [term.name for term in self.terms if term.name not in targets]
        if missing:
            raise UsageError(f"no targets given for loss terms {missing}")
        return [term.fn(outputs, targets[term.name], reduction) for term in self.terms]

    def evaluate(self, s: SymParameter, outputs: Tensor,
                 targets: Mapping[str, Tensor]) -> Tuple[Tensor, List[Tensor]]:
        """Weighted total and the individual term losses."""
        if s.k != self.k:
            raise UsageError(f"sym-parameter has k={s.k} but the objective has {self.k} terms")
        losses = self.term_losses(outputs, targets)
        return weighted_sum(s.values, losses), losses

    def evaluate_per_example(self, weights: np.ndarray, outputs: Tensor,
                             targets: Mapping[str, Tensor]) -> Tuple[Tensor, List[Tensor]]:
        """Mean over examples of ``sum_i w[n, i] * L_i(n)`` for one weight row per example."""
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[1] != self.k:
            raise UsageError(f"expected an N×{self.k} weight matrix, got shape {list(weights.shape)}")
        per_example = self.term_losses(outputs, targets, reduction="none")
        total = None
        for i, losses in enumerate(per_example):
            if losses.shape[0] != weights.shape[0]:
                raise UsageError(f"{weights.shape[0]} weight rows for {losses.shape[0]} examples")
            column = weights[:, i].reshape((weights.shape[0],) + (1,) * (losses.ndim - 1))
            weighted = mul(losses, Tensor(column))
            total = weighted if total is None else add(total, weighted)
        return mean(total), [mean(losses) for losses in per_example]


def weighted_sum(weights: Sequence[float], losses: Sequence[Tensor]) -> Tensor:
    """``sum_i w_i * L_i`` accumulated left to right."""
    if len(weights) != len(losses):
        raise UsageError(f"{len(weights)} weights for {len(losses)} losses")
    total = scale(losses[0], weights[0])
    for weight, loss in zip(weights[1:], losses[1:]):
        total = add(total, scale(loss, weight))
    return total


def combine_losses(obj: WeightedObjective, s: SymParameter, outputs: Tensor,
                   targets: Mapping[str, Tensor]) -> Tensor:
    """Total loss ``L(f, S) = sum_i s_i * L_i`` evaluated on ``outputs``."""
    total, _ = obj.evaluate(s, outputs, targets)
    return total


def default_weight_grid() -> List[SymParameter]:
    """The five weight rows used for the single-model vs. fixed-weight comparison."""
    return [SymParameter(row) for row in ((1.0, 0.0), (0.75, 0.25), (0.5, 0.5), (0.25, 0.75), (0.0, 1.0))]
