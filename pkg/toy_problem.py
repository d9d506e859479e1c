"""One-dimensional regression + classification toy problem.

A single MLP ``f(x, S)`` is asked to regress ``y_r = g(x)`` and to classify
``y_c = 1 if g(x) < h(x) else 0`` with the same scalar output. The regression
loss is MSE; the classification loss is binary cross entropy on the clamped
raw output, scaled down to 20% to balance the two terms.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import seeding
from sym_errors import DimensionError, EvaluationError, NumericalError, UsageError
from sym_parameter import SymParameter, WeightedObjective, default_weight_grid, weighted_sum
from tensor_core import Tensor, activation, bce_loss, dense, mse_loss, scale
from trainer import LossHistory, TrainConfig, TrainingData, train

REGRESSION = "regression"
CLASSIFICATION = "classification"
BCE_SCALE = 0.2
CLAMP_EPS = 1e-6
SAMPLINGS = ("uniform_grid", "uniform_random")
SPLITS = {"train": 0, "eval": 1}


def g(x):
    """Regression target ``x (x - 0.8) (x + 0.9) + 0.5``; works on floats and arrays."""
    return x * (x - 0.8) * (x + 0.9) + 0.5


def h(x):
    """Class boundary line ``-0.1 x + 0.5``."""
    return -0.1 * x + 0.5


def class_label(x):
    """1 where ``g(x) < h(x)`` strictly, else 0 (ties go to 0)."""
    return np.where(g(x) < h(x), 1.0, 0.0)


@dataclass(frozen=True)
class ToySample:
    x: float
    y_r: float
    y_c: float


def make_dataset(n: int, sampling: str = "uniform_random", seed: int = 0, split: str = "train") -> List[ToySample]:
    """Build ``n`` samples with x in [-1, 1]; ``split`` selects an independent random stream."""
    if isinstance(n, bool) or not isinstance(n, int) or n < 2:
        raise UsageError(f"a dataset needs at least 2 samples, got {n!r}")
    if sampling not in SAMPLINGS:
        raise UsageError(f"sampling must be one of {SAMPLINGS}, got {sampling!r}")
    if split not in SPLITS:
        raise UsageError(f"split must be one of {sorted(SPLITS)}, got {split!r}")
    if sampling == "uniform_grid":
        xs = np.linspace(-1.0, 1.0, n)
    else:
        xs = seeding.stream(seed, "data", SPLITS[split]).uniform(-1.0, 1.0, n)
    return [ToySample(float(x), float(g(x)), float(class_label(x))) for x in xs]


def labels_consistent(samples: Sequence[ToySample]) -> bool:
    """True when every stored target re-derives exactly from x."""
    return all(s.y_r == g(s.x) and s.y_c == class_label(s.x) for s in samples)


def to_training_data(samples: Sequence[ToySample]) -> TrainingData:
    xs = np.array([[s.x] for s in samples], dtype=np.float64)
    return TrainingData(
        inputs=xs,
        targets={
            REGRESSION: np.array([[s.y_r] for s in samples], dtype=np.float64),
            CLASSIFICATION: np.array([[s.y_c] for s in samples], dtype=np.float64),
        },
    )


def toy_objective(bce_scale: float = BCE_SCALE, clamp_eps: float = CLAMP_EPS) -> WeightedObjective:
    """``L_r = MSE(f, y_r)`` and ``L_c = bce_scale * BCE(clamp(f), y_c)``."""

    def regression(outputs: Tensor, target: Tensor, reduction: str = "mean") -> Tensor:
        return mse_loss(outputs, target, reduction)

    def classification(outputs: Tensor, target: Tensor, reduction: str = "mean") -> Tensor:
        return scale(bce_loss(outputs, target, clamp_eps, reduction), bce_scale)

    return WeightedObjective([(REGRESSION, regression), (CLASSIFICATION, classification)])


class ToyModel:
    """MLP ``f(x, S)`` with ReLU hidden layers and one raw output.

    ``sym`` and ``s_in`` models take ``1 + k`` inputs (x followed by S);
    ``hyper`` models take x alone and remember the weights they were trained for.
    """

    MODES = ("sym", "hyper", "s_in")

    def __init__(self, mode: str, k: int, width: int, hidden_layers: int, params: Dict[str, Tensor],
                 fixed_weights: Optional[Sequence[float]] = None):
        if mode not in self.MODES:
            raise UsageError(f"model mode must be one of {self.MODES}, got {mode!r}")
        if width < 1 or hidden_layers < 1 or k < 1:
            raise UsageError(f"width, hidden_layers and k must be >= 1, got {width}, {hidden_layers}, {k}")
        self.mode = mode
        self.k = k
        self.width = width
        self.hidden_layers = hidden_layers
        self.fixed_weights = tuple(fixed_weights) if fixed_weights is not None else None
        self.uses_sym_input = mode in ("sym", "s_in")
        self._params = params
        for name, shape in self.parameter_shapes().items():
            if name not in params or params[name].shape != shape:
                found = params[name].shape if name in params else None
                raise DimensionError(f"parameter '{name}' should have shape {shape}, found {found}")

    @classmethod
    def init(cls, mode: str, k: int = 2, width: int = 64, hidden_layers: int = 3,
             rng: Optional[np.random.Generator] = None,
             fixed_weights: Optional[Sequence[float]] = None) -> "ToyModel":
        """Fresh model with weights and biases uniform in ±1/sqrt(fan_in)."""
        rng = rng if rng is not None else np.random.default_rng(0)
        sizes = cls.layer_sizes_for(mode, k, width, hidden_layers)
        params = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            params[f"fc{i}.weight"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
            params[f"fc{i}.bias"] = Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True)
        return cls(mode, k, width, hidden_layers, params, fixed_weights)

    @staticmethod
    def layer_sizes_for(mode: str, k: int, width: int, hidden_layers: int) -> List[int]:
        input_dim = 1 + k if mode in ("sym", "s_in") else 1
        return [input_dim] + [width] * hidden_layers + [1]

    @property
    def layer_sizes(self) -> List[int]:
        return self.layer_sizes_for(self.mode, self.k, self.width, self.hidden_layers)

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        sizes = self.layer_sizes
        shapes = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            shapes[f"fc{i}.weight"] = (fan_in, fan_out)
            shapes[f"fc{i}.bias"] = (fan_out,)
        return shapes

    def parameters(self) -> Dict[str, Tensor]:
        return self._params

    def architecture(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "k": self.k,
            "width": self.width,
            "hidden_layers": self.hidden_layers,
            "layer_sizes": self.layer_sizes,
            "fixed_weights": list(self.fixed_weights) if self.fixed_weights is not None else None,
        }

    def has_finite_parameters(self) -> bool:
        return all(np.all(np.isfinite(p.data)) for p in self._params.values())

    def forward(self, x: np.ndarray, s_rows: Optional[np.ndarray] = None) -> Tensor:
        """Raw output for a batch ``x`` (N×1) and, for conditioned models, S rows (N×k)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        if self.uses_sym_input:
            if s_rows is None:
                raise UsageError(f"a '{self.mode}' model needs S as input")
            s_rows = np.asarray(s_rows, dtype=np.float64)
            if s_rows.shape != (len(x), self.k):
                raise DimensionError(f"expected S rows of shape {(len(x), self.k)}, got {s_rows.shape}")
            hidden = Tensor(np.hstack([x, s_rows]))
        else:
            hidden = Tensor(x)
        last = len(self.layer_sizes) - 2
        for i in range(last + 1):
            hidden = dense(hidden, self._params[f"fc{i}.weight"], self._params[f"fc{i}.bias"])
            if i < last:
                hidden = activation(hidden, "relu")
        return hidden

    def predict(self, x: np.ndarray, s: Optional[SymParameter] = None) -> np.ndarray:
        """Outputs for every x under one S (ignored by hyper models)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        rows = np.tile(s.as_array(), (len(x), 1)) if self.uses_sym_input else None
        return self.forward(x, rows).data.ravel()


def build_model(mode: str, seed: int, k: int = 2, width: int = 64, hidden_layers: int = 3,
                fixed_weights: Optional[Sequence[float]] = None) -> ToyModel:
    """Model initialised from the seed's ``init`` stream."""
    return ToyModel.init(mode, k, width, hidden_layers, seeding.stream(seed, "init"), fixed_weights)


def train_toy_model(cfg: TrainConfig, data: TrainingData, width: int = 64, hidden_layers: int = 3,
                    objective: Optional[WeightedObjective] = None) -> Tuple[ToyModel, LossHistory]:
    """Build and fully train the model that ``cfg.mode`` calls for."""
    objective = objective or toy_objective()
    model = build_model(cfg.mode, cfg.seed, objective.k, width, hidden_layers, cfg.fixed_weights)
    return train(model, objective, data, cfg)


@dataclass
class ReportRow:
    weights: Tuple[float, float]
    total: float
    l_r: float
    l_c: float


@dataclass
class EvaluationReport:
    """Weighted and individual losses for each row of a weight grid."""

    rows: List[ReportRow]
    metadata: Dict[str, Any] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows])

    def row_for(self, weights: Sequence[float]) -> Optional[ReportRow]:
        for row in self.rows:
            if np.allclose(row.weights, weights, atol=1e-12):
                return row
        return None


def _as_training_data(dataset: Union[TrainingData, Sequence[ToySample]]) -> TrainingData:
    return dataset if isinstance(dataset, TrainingData) else to_training_data(dataset)


def evaluate_grid(model: ToyModel, dataset: Union[TrainingData, Sequence[ToySample]],
                  weight_grid: Optional[Sequence[SymParameter]] = None,
                  objective: Optional[WeightedObjective] = None,
                  metadata: Optional[Dict[str, Any]] = None) -> EvaluationReport:
    """Mean L_r, L_c and the weighted total for every grid row.

    Conditioned models see each row's S as input; a hyper model is measured
    once and its two losses are reweighted per row.
    """
    grid = list(weight_grid) if weight_grid is not None else default_weight_grid()
    objective = objective or toy_objective()
    data = _as_training_data(dataset)
    if not model.has_finite_parameters():
        raise EvaluationError("model parameters contain non-finite values")
    targets = {name: Tensor(values) for name, values in data.targets.items()}

    def measure(s: Optional[SymParameter]) -> List[Tensor]:
        rows = np.tile(s.as_array(), (len(data), 1)) if s is not None else None
        try:
            return objective.term_losses(model.forward(data.inputs, rows), targets)
        except NumericalError as e:
            raise EvaluationError(f"evaluation produced non-finite values: {e}") from e

    fixed_terms = None if model.uses_sym_input else measure(None)
    report_rows = []
    for s in grid:
        if s.k != objective.k:
            raise UsageError(f"grid row {s.values} does not have {objective.k} entries")
        terms = measure(s) if model.uses_sym_input else fixed_terms
        total = weighted_sum(s.values, terms).item()
        report_rows.append(ReportRow(tuple(s.values), total, terms[0].item(), terms[1].item()))

    info = {"mode": model.mode, "width": model.width, "l_c_scaled": True,
            "fixed_weights": list(model.fixed_weights) if model.fixed_weights else None}
    info.update(metadata or {})
    return EvaluationReport(report_rows, info)


def output_sensitivity(model: ToyModel, dataset: Union[TrainingData, Sequence[ToySample]],
                       weight_grid: Optional[Sequence[SymParameter]] = None) -> float:
    """Mean over x of the variance over S of ``f(x, S)``."""
    grid = list(weight_grid) if weight_grid is not None else default_weight_grid()
    data = _as_training_data(dataset)
    outputs = np.stack([model.predict(data.inputs, s) for s in grid])
    return float(outputs.var(axis=0).mean())


def monotonicity_ok(report: EvaluationReport, slack: float = 0.01) -> bool:
    """Rows ordered by decreasing w_r: L_r non-decreasing and L_c non-increasing, up to ``slack``."""
    rows = sorted(report.rows, key=lambda row: -row.weights[0])
    for before, after in zip(rows[:-1], rows[1:]):
        if after.l_r < before.l_r - slack or after.l_c > before.l_c + slack:
            return False
    return True


def interpolation_bound_ok(report: EvaluationReport, slack: float = 0.1) -> bool:
    """Each row's total stays within ``slack`` of interpolating the one-hot rows."""
    regression_row = report.row_for((1.0, 0.0))
    classification_row = report.row_for((0.0, 1.0))
    if regression_row is None or classification_row is None:
        raise UsageError("the interpolation check needs the (1, 0) and (0, 1) rows")
    for row in report.rows:
        bound = row.weights[0] * regression_row.l_r + row.weights[1] * classification_row.l_c + slack
        if row.total > bound:
            return False
    return True


@dataclass
class ComparisonRow:
    weights: Tuple[float, float]
    sym: ReportRow
    hyper: Optional[ReportRow]

    @property
    def gap(self) -> Optional[float]:
        return abs(self.sym.total - self.hyper.total) if self.hyper is not None else None


def compare_reports(sym_report: EvaluationReport, hyper_reports: Sequence[EvaluationReport]) -> List[ComparisonRow]:
    """Pair each sym row with the hyper model trained for that row's weights."""
    by_weights = {}
    for report in hyper_reports:
        weights = report.metadata.get("fixed_weights")
        if weights is None:
            raise UsageError("hyper reports must record the fixed weights they were trained with")
        by_weights[tuple(round(w, 12) for w in weights)] = report
    rows = []
    for sym_row in sym_report.rows:
        hyper = by_weights.get(tuple(round(w, 12) for w in sym_row.weights))
        rows.append(ComparisonRow(sym_row.weights, sym_row, hyper.row_for(sym_row.weights) if hyper else None))
    return rows


def max_gap(rows: Sequence[ComparisonRow]) -> float:
    gaps = [row.gap for row in rows if row.gap is not None]
    return max(gaps) if gaps else 0.0
