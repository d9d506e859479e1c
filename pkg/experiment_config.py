import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional

import yaml

import seeding
from ccam_probe import ProbeConfig
from loss_landscape import DEFAULT_POINTS, DEFAULT_X_RANGE, DEFAULT_Y_RANGE
from size_sweep import DEFAULT_WIDTHS
from sym_errors import UsageError
from sym_parameter import SymParameter, default_weight_grid
from toy_problem import BCE_SCALE, CLAMP_EPS, SAMPLINGS
from trainer import TrainConfig, is_integer, is_number

ENV_CONFIG = "SYM_CONFIG"
ENV_SEED = "SYM_SEED"
ENV_OUTPUT_DIR = "SYM_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "runs"


@dataclass
class DataConfig:
    n_train: int = 1024
    n_eval: int = 256
    sampling: str = "uniform_random"


@dataclass
class ModelConfig:
    width: int = 64
    hidden_layers: int = 3
    bce_scale: float = BCE_SCALE
    clamp_eps: float = CLAMP_EPS


@dataclass
class LandscapeConfig:
    s: List[float] = field(default_factory=lambda: [0.5, 0.5])
    x_points: int = DEFAULT_POINTS
    y_points: int = DEFAULT_POINTS
    x_range: List[float] = field(default_factory=lambda: list(DEFAULT_X_RANGE))
    y_range: List[float] = field(default_factory=lambda: list(DEFAULT_Y_RANGE))


@dataclass
class SweepConfig:
    widths: List[int] = field(default_factory=lambda: list(DEFAULT_WIDTHS))


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; the seed lives at the top level and is copied into ``train``."""

    seed: int = 0
    output_dir: str = DEFAULT_OUTPUT_DIR
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weight_grid: List[List[float]] = field(default_factory=lambda: [list(s.values) for s in default_weight_grid()])
    landscape: LandscapeConfig = field(default_factory=LandscapeConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def grid(self) -> List[SymParameter]:
        try:
            return [SymParameter.from_values(row) for row in self.weight_grid]
        except Exception as e:
            raise UsageError(f"weight_grid rows must be simplex points: {e}") from None

    def validate(self) -> None:
        """Check every section; raises UsageError on the first bad value."""
        seeding.validate_seed(self.seed)
        self.train_config().validate(k=2)
        if self.data.sampling not in SAMPLINGS:
            raise UsageError(f"data.sampling must be one of {SAMPLINGS}, got {self.data.sampling!r}")
        for name in ("n_train", "n_eval"):
            value = getattr(self.data, name)
            if not is_integer(value) or value < 2:
                raise UsageError(f"data.{name} must be an integer >= 2, got {value!r}")
        for name in ("width", "hidden_layers"):
            value = getattr(self.model, name)
            if not is_integer(value) or value < 1:
                raise UsageError(f"model.{name} must be an integer >= 1, got {value!r}")
        if not is_number(self.model.clamp_eps) or not 0.0 < self.model.clamp_eps < 0.5:
            raise UsageError(f"model.clamp_eps must lie in (0, 0.5), got {self.model.clamp_eps!r}")
        if not is_number(self.model.bce_scale) or not self.model.bce_scale > 0:
            raise UsageError(f"model.bce_scale must be positive, got {self.model.bce_scale!r}")
        if (not isinstance(self.weight_grid, list) or not self.weight_grid
                or any(not _is_pair(row) for row in self.weight_grid)):
            raise UsageError("weight_grid needs at least one [w_r, w_c] row")
        self.grid()
        if not _is_pair(self.landscape.s):
            raise UsageError(f"landscape.s needs two numbers, got {self.landscape.s!r}")
        for name in ("x_range", "y_range"):
            bounds = getattr(self.landscape, name)
            if not _is_pair(bounds) or not bounds[0] < bounds[1]:
                raise UsageError(f"landscape.{name} must be [low, high] with low < high, got {bounds!r}")
        for name in ("x_points", "y_points"):
            value = getattr(self.landscape, name)
            if not is_integer(value) or value < 2:
                raise UsageError(f"landscape.{name} must be an integer >= 2, got {value!r}")
        if (not isinstance(self.sweep.widths, list) or not self.sweep.widths
                or any(not is_integer(w) or w < 1 for w in self.sweep.widths)):
            raise UsageError(f"sweep.widths must be a non-empty list of integers >= 1, got {self.sweep.widths!r}")
        self.probe.validate()


def _is_pair(values) -> bool:
    return isinstance(values, (list, tuple)) and len(values) == 2 and all(is_number(v) for v in values)


SECTIONS = {
    "train": TrainConfig,
    "data": DataConfig,
    "model": ModelConfig,
    "landscape": LandscapeConfig,
    "sweep": SweepConfig,
    "probe": ProbeConfig,
}
TRAIN_EXCLUDED = ("seed",)


def _section_from_dict(name: str, cls, data: Any, excluded=()):
    if not isinstance(data, dict):
        raise UsageError(f"config section '{name}' must be a mapping")
    allowed = {f.name for f in fields(cls)} - set(excluded)
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise UsageError(f"unknown keys in config section '{name}': {unknown}")
    return cls(**data)


def config_from_dict(data: Optional[Dict[str, Any]]) -> ExperimentConfig:
    """Build a config from a parsed document; missing keys keep their defaults."""
    data = dict(data or {})
    allowed = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise UsageError(f"unknown top-level config keys: {unknown}")
    for name, cls in SECTIONS.items():
        if name in data:
            excluded = TRAIN_EXCLUDED if name == "train" else ()
            data[name] = _section_from_dict(name, cls, data[name], excluded)
    return ExperimentConfig(**data)


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    data = asdict(config)
    for key in TRAIN_EXCLUDED:
        data["train"].pop(key)
    return data


class ConfigManager:
    """Loads and saves experiment configurations as YAML documents."""

    def __init__(self, config_file: Optional[str] = None):
        """Initialize with an optional config file; no file means the defaults."""
        self.config_file = config_file
        self.config = self._load_config()

    def _load_config(self) -> ExperimentConfig:
        if not self.config_file:
            return ExperimentConfig()
        with open(self.config_file, "r") as f:
            try:
                data = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise UsageError(f"cannot parse config file {self.config_file}: {e}") from None
        if data is not None and not isinstance(data, dict):
            raise UsageError(f"config file {self.config_file} must hold a mapping")
        config = config_from_dict(data)
        config.validate()
        return config

    def save(self, path: Optional[str] = None) -> str:
        """Write the current config to ``path`` (default: the file it was loaded from)."""
        path = path or self.config_file
        if not path:
            raise UsageError("no path given to save the config to")
        with open(path, "w") as f:
            yaml.safe_dump(config_to_dict(self.config), f, sort_keys=False)
        return path

    def apply_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None) -> ExperimentConfig:
        """Replace the seed and output directory when given, then re-validate."""
        if seed is not None:
            self.config.seed = seed
        if output_dir is not None:
            self.config.output_dir = output_dir
        self.config.validate()
        return self.config


def _env_seed() -> Optional[int]:
    value = os.getenv(ENV_SEED)
    if value is None or value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"{ENV_SEED} must be an integer, got {value!r}") from None


def resolve_config(config_path: Optional[str] = None, seed: Optional[int] = None,
                   output_dir: Optional[str] = None) -> ExperimentConfig:
    """Flags win over environment values, which win over the config file."""
    manager = ConfigManager(config_path or os.getenv(ENV_CONFIG) or None)
    return manager.apply_overrides(
        seed if seed is not None else _env_seed(),
        output_dir if output_dir is not None else (os.getenv(ENV_OUTPUT_DIR) or None),
    )


def load_config(path: str) -> ExperimentConfig:
    return ConfigManager(path).config


def save_config(config: ExperimentConfig, path: str) -> str:
    manager = ConfigManager()
    manager.config = config
    return manager.save(path)
