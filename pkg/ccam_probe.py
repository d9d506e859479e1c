"""Synthetic conditioning task that checks CCAM gating is learnable.

Features ``X ~ N(0, 1)`` of shape ``H×W×C`` and ``S ~ Dirichlet(alpha)`` are
mapped to ``X * m(S)`` for a hidden per-channel mask ``m(S) = sigmoid(S A + b)``.
A CCAM-gated regressor and a concat-injection regressor share the same
per-position linear head; only the former can express the S-dependent gain.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from rich.console import Console
from scipy.special import expit

import seeding
from ccam import CcamLayer, SensitivityTable, ccam_forward, ccam_sensitivity, concat_inject
from gradient_check import GradientCheckResult, check_gradients
from optimizer import AdamOptimizer
from sym_errors import NumericalError, TrainingError, UsageError
from sym_parameter import Concentration, SymParameter, sample_dirichlet_batch
from tensor_core import Tape, Tensor, backward, dense, mse_loss, mul, reduce_sum, reshape
from trainer import check_schedule, is_integer, is_number

# Initialize console for rich output
console = Console()


@dataclass
class ProbeConfig:
    channels: int = 16
    height: int = 4
    width: int = 4
    k: int = 3
    reduction: int = 2
    n_train: int = 1024
    n_eval: int = 256
    batch_size: int = 32
    epoch_schedule: List[List[float]] = field(default_factory=lambda: [[300, 0.01], [200, 0.003], [100, 0.001]])
    mask_scale: float = 4.0
    alpha: List[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])

    def validate(self) -> None:
        for name in ("channels", "height", "width", "k", "reduction", "n_train", "n_eval", "batch_size"):
            value = getattr(self, name)
            if not is_integer(value) or value < 1:
                raise UsageError(f"probe.{name} must be an integer >= 1, got {value!r}")
        if not isinstance(self.alpha, (list, tuple)) or len(self.alpha) != self.k:
            raise UsageError(f"probe.alpha needs {self.k} entries, got {self.alpha!r}")
        if not is_number(self.mask_scale) or not self.mask_scale > 0:
            raise UsageError(f"probe.mask_scale must be positive, got {self.mask_scale!r}")
        check_schedule(self.epoch_schedule, prefix="probe.")


@dataclass
class GatingTask:
    """Inputs, sym-parameters and gated targets for one split."""

    features: np.ndarray
    s_rows: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.features)


class MaskOracle:
    """The hidden mask ``sigmoid(S A + b)``."""

    def __init__(self, cfg: ProbeConfig, rng: np.random.Generator):
        self.weights = rng.normal(0.0, cfg.mask_scale, (cfg.k, cfg.channels))
        self.bias = rng.normal(0.0, 1.0, cfg.channels)

    def mask(self, s_rows: np.ndarray) -> np.ndarray:
        return expit(s_rows @ self.weights + self.bias)

    def make_task(self, cfg: ProbeConfig, n: int, rng: np.random.Generator) -> GatingTask:
        features = rng.standard_normal((n, cfg.height, cfg.width, cfg.channels))
        s_rows = sample_dirichlet_batch(Concentration(tuple(cfg.alpha)), rng, n)
        targets = features * self.mask(s_rows)[:, None, None, :]
        return GatingTask(features, s_rows, targets)


def _head(rng: np.random.Generator, fan_in: int, fan_out: int) -> Dict[str, Tensor]:
    bound = 1.0 / np.sqrt(fan_in)
    return {
        "head.weight": Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True),
        "head.bias": Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True),
    }


def _apply_head(features: Tensor, params: Dict[str, Tensor], channels: int) -> Tensor:
    """The same affine map at every spatial position."""
    n, height, width, depth = features.shape
    flat = reshape(features, (n * height * width, depth))
    out = dense(flat, params["head.weight"], params["head.bias"])
    return reshape(out, (n, height, width, channels))


class GatedRegressor:
    """CCAM followed by the shared per-position linear head."""

    name = "ccam"

    def __init__(self, cfg: ProbeConfig, rng: np.random.Generator):
        self.channels = cfg.channels
        self.layer = CcamLayer.init(cfg.channels, cfg.k, cfg.reduction, rng)
        self.head = _head(rng, cfg.channels, cfg.channels)

    def parameters(self) -> Dict[str, Tensor]:
        return {**{f"ccam.{name}": p for name, p in self.layer.parameters().items()}, **self.head}

    def forward(self, features: np.ndarray, s_rows: np.ndarray) -> Tensor:
        gated, _ = ccam_forward(self.layer, Tensor(features), s_rows)
        return _apply_head(gated, self.head, self.channels)


class ConcatRegressor:
    """S appended as constant planes, then the shared per-position linear head."""

    name = "concat"

    def __init__(self, cfg: ProbeConfig, rng: np.random.Generator):
        self.channels = cfg.channels
        self.head = _head(rng, cfg.channels + cfg.k, cfg.channels)

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.head)

    def forward(self, features: np.ndarray, s_rows: np.ndarray) -> Tensor:
        return _apply_head(concat_inject(Tensor(features), s_rows), self.head, self.channels)


def train_regressor(model, task: GatingTask, cfg: ProbeConfig, rng: np.random.Generator) -> float:
    """Fit ``model`` with Adam on shuffled mini-batches; returns the last epoch's mean loss."""
    optimizer = AdamOptimizer(model.parameters())
    epoch = 0
    last_losses: List[float] = []
    for epochs, lr in cfg.epoch_schedule:
        for _ in range(int(epochs)):
            order = rng.permutation(len(task))
            last_losses = []
            for batch, start in enumerate(range(0, len(task), cfg.batch_size)):
                index = order[start:start + cfg.batch_size]
                optimizer.zero_grad()
                try:
                    with Tape():
                        loss = mse_loss(model.forward(task.features[index], task.s_rows[index]),
                                        Tensor(task.targets[index]))
                    backward(loss)
                except NumericalError as e:
                    raise TrainingError(f"{model.name} probe diverged at epoch {epoch}, batch {batch}: {e}",
                                        epoch, batch) from e
                optimizer.step(float(lr))
                last_losses.append(loss.item())
            epoch += 1
    return float(np.mean(last_losses)) if last_losses else float("nan")


def evaluate_regressor(model, task: GatingTask) -> float:
    return mse_loss(model.forward(task.features, task.s_rows), Tensor(task.targets)).item()


def simplex_probe_grid(k: int) -> List[SymParameter]:
    """Vertices, edge midpoints and the centroid of the k-simplex."""
    grid = [SymParameter.one_hot(k, i) for i in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            grid.append(SymParameter(tuple(0.5 if c in (i, j) else 0.0 for c in range(k))))
    grid.append(SymParameter(tuple([1.0 / k] * k)))
    return grid


def _weighted_total(rng: np.random.Generator, shape) -> Callable[[Tensor], Tensor]:
    weights = Tensor(rng.uniform(-1.0, 1.0, shape))

    def total(values: Tensor) -> Tensor:
        return reduce_sum(mul(values, weights))

    return total


def ccam_gradient_checks(rng: np.random.Generator, channels: int = 8, k: int = 3, reduction: int = 4,
                         size: int = 4) -> List[GradientCheckResult]:
    """Finite-difference checks of CCAM and concat injection w.r.t. features, S and parameters."""
    layer = CcamLayer.init(channels, k, reduction, rng)
    features = Tensor(rng.standard_normal((size, size, channels)))
    s = Tensor(sample_dirichlet_batch(Concentration((1.0,) * k), rng, 1)[0])
    weigh = _weighted_total(rng, (size, size, channels))

    def gated_sum() -> Tensor:
        return reduce_sum(ccam_forward(layer, features, s)[0])

    def gated_weighted() -> Tensor:
        return weigh(ccam_forward(layer, features, s)[0])

    inject_features = Tensor(rng.standard_normal((size, size, channels)))
    inject_s = Tensor(sample_dirichlet_batch(Concentration((1.0,) * k), rng, 1)[0])
    weigh_inject = _weighted_total(rng, (size, size, channels + k))

    return [
        check_gradients(gated_sum, {"S": s}, name="ccam sum(Y) wrt S"),
        check_gradients(gated_weighted, {"X": features}, name="ccam wrt X"),
        check_gradients(gated_weighted, layer.parameters(), name="ccam wrt parameters"),
        check_gradients(lambda: weigh_inject(concat_inject(inject_features, inject_s)),
                        {"X": inject_features, "S": inject_s}, name="concat_inject wrt X, S"),
    ]


@dataclass
class ProbeResult:
    ccam_mse: float
    concat_mse: float
    sensitivity: SensitivityTable
    gradient_checks: List[GradientCheckResult]

    @property
    def ratio(self) -> float:
        """How many times lower the CCAM error is."""
        return self.concat_mse / self.ccam_mse if self.ccam_mse > 0 else float("inf")

    @property
    def gating_learned(self) -> bool:
        return self.ccam_mse * 10.0 <= self.concat_mse

    @property
    def gradients_ok(self) -> bool:
        return all(result.passed for result in self.gradient_checks)


def run_probe(cfg: Optional[ProbeConfig] = None, seed: int = 0) -> ProbeResult:
    """Train both regressors on the synthetic task and measure them on held-out data."""
    cfg = cfg or ProbeConfig()
    cfg.validate()
    rng = seeding.stream(seed, "probe")
    oracle = MaskOracle(cfg, rng)
    train_task = oracle.make_task(cfg, cfg.n_train, rng)
    eval_task = oracle.make_task(cfg, cfg.n_eval, rng)

    # Same task, separate init streams for the two regressors
    results = {}
    models = {}
    for model_cls, stream_key in ((GatedRegressor, 1), (ConcatRegressor, 2)):
        model_rng = seeding.stream(seed, "probe", stream_key)
        model = model_cls(cfg, model_rng)
        console.print(f"[cyan]Training {model.name} regressor[/cyan]")
        train_loss = train_regressor(model, train_task, cfg, model_rng)
        results[model.name] = evaluate_regressor(model, eval_task)
        models[model.name] = model
        console.print(f"  {model.name}: train MSE {train_loss:.6f}, held-out MSE {results[model.name]:.6f}")

    # Gate table on the first held-out example
    gated = models["ccam"]
    sensitivity = ccam_sensitivity(gated.layer, Tensor(eval_task.features[0]), simplex_probe_grid(cfg.k))
    checks = ccam_gradient_checks(seeding.stream(seed, "probe", 3))
    return ProbeResult(results["ccam"], results["concat"], sensitivity, checks)
