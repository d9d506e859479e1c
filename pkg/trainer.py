"""Training loop that resamples the sym-parameter for every batch.

Three modes share the loop:

* ``sym``   - draw S ~ Dirichlet(alpha), feed S to the model and weight the
  losses by the same S.
* ``hyper`` - no S input; losses weighted by ``fixed_weights``.
* ``s_in``  - feed a freshly drawn S to the model but weight the losses by
  ``fixed_weights``.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Tuple

import numpy as np
from rich.console import Console

import seeding
from optimizer import DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS, AdamOptimizer, AdamState
from sym_errors import NumericalError, TrainingError, UsageError
from sym_parameter import (Concentration, SymParameter, WeightedObjective, sample_dirichlet,
                           sample_dirichlet_batch)
from tensor_core import Tape, Tensor, backward

# Initialize console for rich output
console = Console()

MODES = ("sym", "hyper", "s_in")
GRANULARITIES = ("batch", "example")
DEFAULT_SCHEDULE = [[200, 0.01], [200, 0.001], [100, 0.0001]]


def is_integer(value) -> bool:
    """True for ints (and integral numpy ints), never for bools."""
    return isinstance(value, (int, np.integer)) and not isinstance(value, (bool, np.bool_))


def is_number(value) -> bool:
    return is_integer(value) or isinstance(value, (float, np.floating))


def check_schedule(schedule, prefix: str = "") -> None:
    """Each phase must be ``[epochs, learning_rate]`` with integer epochs >= 0 and a positive rate."""
    if not isinstance(schedule, (list, tuple)):
        raise UsageError(f"{prefix}epoch_schedule must be a list of [epochs, learning_rate] phases, got {schedule!r}")
    for phase in schedule:
        if not isinstance(phase, (list, tuple)) or len(phase) != 2:
            raise UsageError(f"each {prefix}schedule phase is [epochs, learning_rate], got {phase!r}")
        epochs, lr = phase
        if not is_integer(epochs) or epochs < 0:
            raise UsageError(f"{prefix}phase epochs must be a non-negative integer, got {epochs!r}")
        if not is_number(lr) or not lr > 0:
            raise UsageError(f"{prefix}learning rates must be positive numbers, got {lr!r}")


class ConditionedModel(Protocol):
    """What the trainer needs from a model ``f(x, S)``."""

    k: int
    uses_sym_input: bool

    def forward(self, x: np.ndarray, s_rows: Optional[np.ndarray]) -> Tensor: ...

    def parameters(self) -> Dict[str, Tensor]: ...


@dataclass
class TrainingData:
    """Model inputs plus one target array per loss term, all with N rows."""

    inputs: np.ndarray
    targets: Dict[str, np.ndarray]

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise UsageError("training data must not be empty")
        for name, values in self.targets.items():
            if len(values) != len(self.inputs):
                raise UsageError(f"target '{name}' has {len(values)} rows for {len(self.inputs)} inputs")

    def __len__(self) -> int:
        return len(self.inputs)

    def batch(self, index: np.ndarray) -> Tuple[np.ndarray, Dict[str, Tensor]]:
        return self.inputs[index], {name: Tensor(values[index]) for name, values in self.targets.items()}


@dataclass
class TrainConfig:
    """Optimisation recipe; defaults match the toy-problem recipe."""

    batch_size: int = 16
    epoch_schedule: List[List[float]] = field(default_factory=lambda: [list(p) for p in DEFAULT_SCHEDULE])
    adam_beta1: float = DEFAULT_BETA1
    adam_beta2: float = DEFAULT_BETA2
    adam_eps: float = DEFAULT_EPS
    alpha: List[float] = field(default_factory=lambda: [0.5, 0.5])
    seed: int = 0
    mode: str = "sym"
    fixed_weights: Optional[List[float]] = None
    s_granularity: str = "batch"
    log_every: int = 50

    def validate(self, k: Optional[int] = None) -> None:
        """Raise UsageError on any out-of-range value."""
        if not is_integer(self.batch_size) or self.batch_size < 1:
            raise UsageError(f"batch_size must be an integer >= 1, got {self.batch_size!r}")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.s_granularity not in GRANULARITIES:
            raise UsageError(f"s_granularity must be one of {GRANULARITIES}, got {self.s_granularity!r}")
        if not is_integer(self.log_every) or self.log_every < 0:
            raise UsageError(f"log_every must be a non-negative integer, got {self.log_every!r}")
        check_schedule(self.epoch_schedule)
        for name, value in (("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)):
            if not is_number(value) or not 0.0 <= value < 1.0:
                raise UsageError(f"{name} must lie in [0, 1), got {value!r}")
        if not is_number(self.adam_eps) or not self.adam_eps > 0:
            raise UsageError(f"adam_eps must be positive, got {self.adam_eps!r}")
        seeding.validate_seed(self.seed)
        concentration = self.concentration()
        if k is not None and concentration.k != k:
            raise UsageError(f"alpha has {concentration.k} entries but the objective has {k} terms")
        if self.mode in ("hyper", "s_in"):
            if self.fixed_weights is None:
                raise UsageError(f"mode '{self.mode}' requires fixed_weights")
            weights = self.weights()
            if k is not None and weights.k != k:
                raise UsageError(f"fixed_weights has {weights.k} entries but the objective has {k} terms")

    def concentration(self) -> Concentration:
        try:
            return Concentration(tuple(self.alpha))
        except Exception as e:
            raise UsageError(f"invalid alpha: {e}") from None

    def weights(self) -> SymParameter:
        try:
            return SymParameter(tuple(self.fixed_weights))
        except Exception as e:
            raise UsageError(f"fixed_weights must be a simplex point: {e}") from None

    @property
    def total_epochs(self) -> int:
        return int(sum(int(epochs) for epochs, _ in self.epoch_schedule))

    def lr_for_epoch(self, epoch: int) -> float:
        boundary = 0
        for epochs, lr in self.epoch_schedule:
            boundary += int(epochs)
            if epoch < boundary:
                return float(lr)
        raise UsageError(f"epoch {epoch} is past the end of the schedule")


@dataclass
class HistoryRow:
    epoch: int
    batch: int
    s: Tuple[float, ...]
    total_loss: float
    term_losses: Tuple[float, ...]


@dataclass
class LossHistory:
    """Per-batch record of S, the weighted total and each term loss."""

    term_names: List[str]
    rows: List[HistoryRow] = field(default_factory=list)

    def append(self, row: HistoryRow) -> None:
        self.rows.append(row)

    def final_term_loss(self, name: str, last_batches: int = 1) -> float:
        index = self.term_names.index(name)
        tail = self.rows[-last_batches:]
        return float(np.mean([row.term_losses[index] for row in tail]))

    def epoch_means(self) -> Dict[int, float]:
        totals: Dict[int, List[float]] = {}
        for row in self.rows:
            totals.setdefault(row.epoch, []).append(row.total_loss)
        return {epoch: float(np.mean(values)) for epoch, values in totals.items()}

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class TrainingState:
    """Everything needed to continue a run bit-identically."""

    next_epoch: int
    adam: AdamState
    dirichlet_rng: dict
    shuffle_rng: dict


class SymTrainer:
    """Trains one model under one TrainConfig."""

    def __init__(self, model: ConditionedModel, objective: WeightedObjective, cfg: TrainConfig,
                 state: Optional[TrainingState] = None):
        """Validate the pairing of model, objective and config."""
        cfg.validate(objective.k)
        if model.k != objective.k:
            raise UsageError(f"model expects k={model.k} but the objective has {objective.k} terms")
        wants_input = cfg.mode in ("sym", "s_in")
        if model.uses_sym_input != wants_input:
            raise UsageError(f"mode '{cfg.mode}' needs a model {'with' if wants_input else 'without'} an S input")
        self.model = model
        self.objective = objective
        self.cfg = cfg
        self.alpha = cfg.concentration()
        self.fixed = cfg.weights() if cfg.mode in ("hyper", "s_in") else None

        if state is None:
            self.next_epoch = 0
            self.optimizer = AdamOptimizer(model.parameters(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            self.dirichlet_rng = seeding.stream(cfg.seed, "dirichlet")
            self.shuffle_rng = seeding.stream(cfg.seed, "shuffle")
        else:
            self.next_epoch = state.next_epoch
            self.optimizer = AdamOptimizer(model.parameters(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                                           state=state.adam)
            self.dirichlet_rng = seeding.restore_generator(state.dirichlet_rng)
            self.shuffle_rng = seeding.restore_generator(state.shuffle_rng)

    def state(self) -> TrainingState:
        return TrainingState(
            next_epoch=self.next_epoch,
            adam=self.optimizer.state,
            dirichlet_rng=seeding.generator_state(self.dirichlet_rng),
            shuffle_rng=seeding.generator_state(self.shuffle_rng),
        )

    @property
    def finished(self) -> bool:
        return self.next_epoch >= self.cfg.total_epochs

    def _draw(self, n: int) -> Tuple[Optional[np.ndarray], Optional[SymParameter], Optional[np.ndarray]]:
        """Return (model S rows, shared loss weights, per-example loss weights)."""
        mode, per_example = self.cfg.mode, self.cfg.s_granularity == "example"
        if mode == "hyper":
            return None, self.fixed, None
        if per_example:
            rows = sample_dirichlet_batch(self.alpha, self.dirichlet_rng, n)
        else:
            rows = np.tile(sample_dirichlet(self.alpha, self.dirichlet_rng).as_array(), (n, 1))
        if mode == "s_in":
            return rows, self.fixed, None
        if per_example:
            return rows, None, rows
        return rows, SymParameter(tuple(rows[0])), None

    def _step(self, data: TrainingData, index: np.ndarray, epoch: int, batch: int, lr: float) -> HistoryRow:
        x, targets = data.batch(index)
        s_rows, shared, per_example = self._draw(len(index))
        self.optimizer.zero_grad()
        try:
            with Tape():
                outputs = self.model.forward(x, s_rows)
                if per_example is not None:
                    total, terms = self.objective.evaluate_per_example(per_example, outputs, targets)
                else:
                    total, terms = self.objective.evaluate(shared, outputs, targets)
            backward(total)
        except NumericalError as e:
            raise TrainingError(f"loss diverged at epoch {epoch}, batch {batch}: {e}", epoch, batch) from e
        self.optimizer.step(lr)

        logged_s = tuple(per_example.mean(axis=0)) if per_example is not None else shared.values
        return HistoryRow(epoch, batch, tuple(float(v) for v in logged_s), total.item(),
                          tuple(term.item() for term in terms))

    def train(self, data: TrainingData, max_epochs: Optional[int] = None) -> LossHistory:
        """Run the schedule (or at most ``max_epochs`` more epochs) and return the loss history."""
        history = LossHistory(self.objective.names)
        total_epochs = self.cfg.total_epochs
        stop = total_epochs if max_epochs is None else min(total_epochs, self.next_epoch + max_epochs)
        batch_size = self.cfg.batch_size
        previous_lr = None

        while self.next_epoch < stop:
            epoch = self.next_epoch
            lr = self.cfg.lr_for_epoch(epoch)
            if lr != previous_lr:
                console.print(f"[cyan]{self.cfg.mode}: epoch {epoch}, learning rate {lr:g}[/cyan]")
                previous_lr = lr
            order = self.shuffle_rng.permutation(len(data))
            epoch_losses = []
            for batch, start in enumerate(range(0, len(data), batch_size)):
                row = self._step(data, order[start:start + batch_size], epoch, batch, lr)
                history.append(row)
                epoch_losses.append(row.total_loss)
            self.next_epoch += 1
            if self.cfg.log_every and self.next_epoch % self.cfg.log_every == 0:
                console.print(f"  epoch {self.next_epoch}/{total_epochs}: mean loss {np.mean(epoch_losses):.6f}")
        return history


def train(model: ConditionedModel, obj: WeightedObjective, dataset: TrainingData,
          cfg: TrainConfig) -> Tuple[ConditionedModel, LossHistory]:
    """Train ``model`` in place for the full schedule."""
    history = SymTrainer(model, obj, cfg).train(dataset)
    return model, history
