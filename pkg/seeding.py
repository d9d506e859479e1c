"""Named random sub-streams derived from one 64-bit seed."""

from typing import Dict

import numpy as np

from sym_errors import UsageError

STREAM_IDS: Dict[str, int] = {
    "data": 0,
    "init": 1,
    "dirichlet": 2,
    "shuffle": 3,
    "probe": 4,
}

MAX_SEED = 2 ** 64 - 1


def validate_seed(seed: int) -> int:
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MAX_SEED:
        raise UsageError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return seed


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Generator for the named sub-stream; ``extra`` keys split it further (e.g. per width)."""
    if name not in STREAM_IDS:
        raise UsageError(f"unknown random stream '{name}', expected one of {sorted(STREAM_IDS)}")
    sequence = np.random.SeedSequence(validate_seed(seed), spawn_key=(STREAM_IDS[name],) + tuple(extra))
    return np.random.default_rng(sequence)


def generator_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng
