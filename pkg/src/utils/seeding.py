"""
Counter-based random number generation.

Every random stream in the pipeline is derived from the master seed plus a
tuple of integer keys (pair index, loop iteration, stream id), so results do
not depend on the order in which pairs are processed.
"""

from typing import Tuple

import numpy as np

_UINT64_MASK = (1 << 64) - 1

# Stream identifiers used as the last derivation key
STREAM_RANSAC = 1
STREAM_NEGATIVES = 2
STREAM_SHUFFLE = 3
STREAM_INIT = 4
STREAM_EVALUATE = 5
STREAM_SCENE = 6
STREAM_PAIR = 7


def seed_entropy(seed: int, *keys: int) -> Tuple[int, ...]:
    """Build a nonnegative entropy tuple for ``numpy.random.SeedSequence``."""
    entropy = [int(seed) & _UINT64_MASK]
    for key in keys:
        if key < 0:
            raise ValueError(f"Derivation keys must be nonnegative, got {key}")
        entropy.append(int(key))
    return tuple(entropy)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence(seed_entropy(seed, *keys)))


def derive_seed(seed: int, *keys: int) -> int:
    """Return a 63-bit integer seed for ``(seed, *keys)``."""
    state = np.random.SeedSequence(seed_entropy(seed, *keys)).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])
