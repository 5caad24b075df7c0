"""
Keyed, counter-based random streams.

Every random quantity in the package is drawn from a Philox generator whose key
is derived from a tuple of non-negative integers (master seed, purpose tag,
indices...). Two draws with the same key tuple are identical no matter which
thread asks for them or in which order.
"""
from typing import Iterable

import numpy as np

# Purpose tags keep streams for different consumers disjoint.
DATA_STREAM = 0
MULTIPLIER_STREAM = 1
REPLICATION_STREAM = 2
ORACLE_STREAM = 3


def _key(parts: Iterable[int]) -> list:
    key = [int(p) for p in parts]
    if any(p < 0 for p in key):
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return key


def stream(*parts: int) -> np.random.Generator:
    """Generator for the substream identified by ``parts``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(_key(parts))))


def derive_seed(*parts: int) -> int:
    """A 63-bit seed derived from ``parts``; used to hand a child run its own seed."""
    state = np.random.SeedSequence(_key(parts)).generate_state(1, dtype=np.uint64)[0]
    return int(state >> np.uint64(1))
