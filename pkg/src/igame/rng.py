"""The single source of randomness.

Every randomized harness draws from ``make_rng(seed)``: numpy's Philox-4x64-10
counter-based generator keyed directly with the 64-bit seed (counter starts
at zero, no seed hashing).  ``random()`` doubles take the upper 53 bits of
each 64-bit output, so a stream is fully determined by the seed.
"""

import numpy as np

SEED_MAX = 2**64 - 1


def make_rng(seed: int) -> np.random.Generator:
    if not 0 <= int(seed) <= SEED_MAX:
        raise ValueError("seed must fit in 64 bits")
    return np.random.Generator(np.random.Philox(key=int(seed)))


def uniform(seed: int, size, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    return low + (high - low) * make_rng(seed).random(size)
