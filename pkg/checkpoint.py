"""Resumable toy-model checkpoints stored as JSON documents."""

import json
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional

import numpy as np

from optimizer import AdamState
from sym_errors import FormatError, SymError
from tensor_core import Tensor
from toy_problem import ToyModel
from trainer import SymTrainer, TrainConfig, TrainingState

FORMAT_VERSION = 1
REQUIRED_KEYS = ("format_version", "mode", "architecture", "parameters", "adam", "rng", "progress", "train_config",
                 "loss_settings")


@dataclass
class Checkpoint:
    """Flat, JSON-friendly snapshot of a model and its training progress."""

    format_version: int
    mode: str
    architecture: Dict[str, Any]
    parameters: Dict[str, List[float]]
    adam: Dict[str, Any]
    rng: Dict[str, Any]
    progress: Dict[str, int]
    train_config: Dict[str, Any]
    loss_settings: Dict[str, float]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def next_epoch(self) -> int:
        return int(self.progress["epoch"])

    @property
    def fixed_weights(self) -> Optional[List[float]]:
        return self.architecture.get("fixed_weights")


class CheckpointManager:
    """Builds, saves, loads and restores checkpoints."""

    @staticmethod
    def capture(model: ToyModel, trainer: SymTrainer, bce_scale: float, clamp_eps: float) -> Checkpoint:
        """Snapshot ``model`` and the trainer's progress at an epoch boundary."""
        state = trainer.state()
        return Checkpoint(
            format_version=FORMAT_VERSION,
            mode=model.mode,
            architecture=model.architecture(),
            parameters={name: p.data.ravel().tolist() for name, p in model.parameters().items()},
            adam=state.adam.to_dict(),
            rng={"dirichlet": state.dirichlet_rng, "shuffle": state.shuffle_rng},
            progress={"epoch": state.next_epoch, "batch": 0},
            train_config=asdict(trainer.cfg),
            loss_settings={"bce_scale": float(bce_scale), "clamp_eps": float(clamp_eps)},
        )

    @staticmethod
    def dumps(checkpoint: Checkpoint) -> str:
        return json.dumps(checkpoint.to_dict(), indent=4, sort_keys=True) + "\n"

    def save(self, checkpoint: Checkpoint, path: str) -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w") as f:
            f.write(self.dumps(checkpoint))
        return path

    def load(self, path: str) -> Checkpoint:
        """Read and validate a checkpoint; anything malformed raises FormatError."""
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except ValueError as e:
            raise FormatError(f"checkpoint {path} is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise FormatError(f"checkpoint {path} must hold a JSON object")
        missing = [key for key in REQUIRED_KEYS if key not in data]
        if missing:
            raise FormatError(f"checkpoint {path} is missing {missing}")
        if data["format_version"] != FORMAT_VERSION:
            raise FormatError(f"checkpoint {path} has format_version {data['format_version']!r}, expected {FORMAT_VERSION}")
        known = {f.name for f in fields(Checkpoint)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise FormatError(f"checkpoint {path} has unknown keys {unknown}")
        checkpoint = Checkpoint(**data)
        # Rebuild once so shape mismatches surface at load time
        self.restore_model(checkpoint)
        return checkpoint

    @staticmethod
    def restore_model(checkpoint: Checkpoint) -> ToyModel:
        """Rebuild the model; stored arrays must match the architecture exactly."""
        arch = checkpoint.architecture
        try:
            mode, k, width, layers = arch["mode"], int(arch["k"]), int(arch["width"]), int(arch["hidden_layers"])
            sizes = ToyModel.layer_sizes_for(mode, k, width, layers)
            if list(arch.get("layer_sizes", sizes)) != sizes or mode != checkpoint.mode:
                raise FormatError("architecture descriptor is inconsistent")
            params = {}
            for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                for name, shape in ((f"fc{i}.weight", (fan_in, fan_out)), (f"fc{i}.bias", (fan_out,))):
                    values = np.array(checkpoint.parameters[name], dtype=np.float64)
                    if values.size != int(np.prod(shape)):
                        raise FormatError(f"parameter '{name}' holds {values.size} values, architecture needs "
                                          f"{int(np.prod(shape))}")
                    params[name] = Tensor(values.reshape(shape), requires_grad=True)
            extra = sorted(set(checkpoint.parameters) - set(params))
            if extra:
                raise FormatError(f"parameters {extra} do not belong to the architecture")
            return ToyModel(mode, k, width, layers, params, arch.get("fixed_weights"))
        except FormatError:
            raise
        except (KeyError, TypeError, ValueError, SymError) as e:
            raise FormatError(f"checkpoint does not match its architecture: {e}") from None

    @staticmethod
    def restore_config(checkpoint: Checkpoint) -> TrainConfig:
        try:
            return TrainConfig(**checkpoint.train_config)
        except TypeError as e:
            raise FormatError(f"checkpoint train_config is malformed: {e}") from None

    @staticmethod
    def restore_state(checkpoint: Checkpoint, model: ToyModel) -> TrainingState:
        shapes = {name: p.shape for name, p in model.parameters().items()}
        try:
            adam = AdamState.from_dict(checkpoint.adam, shapes)
            return TrainingState(
                next_epoch=checkpoint.next_epoch,
                adam=adam,
                dirichlet_rng=checkpoint.rng["dirichlet"],
                shuffle_rng=checkpoint.rng["shuffle"],
            )
        except (KeyError, TypeError, ValueError, SymError) as e:
            raise FormatError(f"checkpoint optimizer or generator state is malformed: {e}") from None
