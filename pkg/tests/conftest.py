import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from toy_problem import make_dataset, to_training_data  # noqa: E402
from trainer import TrainConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """A few epochs on a short schedule; enough to exercise every code path."""
    return TrainConfig(batch_size=8, epoch_schedule=[[2, 0.01], [1, 0.001]], seed=7, log_every=0)


@pytest.fixture
def toy_data():
    return to_training_data(make_dataset(32, "uniform_random", seed=3))
