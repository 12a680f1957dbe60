"""Counter-based random numbers keyed by ``(seed, counter)``.

Each output is a pure function of the key, so any subset of counters can be
evaluated in any order (or in parallel) and give the same values. The mixer is
the SplitMix64 finalizer applied to a Weyl-sequence position.
"""
from __future__ import annotations

import numpy as np

__all__ = ["hash64", "uniform"]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SEED_SALT = np.uint64(0xD1B54A32D192ED03)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash64(seed: int, counter) -> np.ndarray:
    """64-bit random words for each counter value under ``seed``."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    with np.errstate(over="ignore"):
        key = _mix(np.uint64(seed) * _SEED_SALT + _GOLDEN)
        c = np.asarray(counter).astype(np.uint64)
        return _mix(key + (c + np.uint64(1)) * _GOLDEN)


def uniform(seed: int, counter) -> np.ndarray:
    """Doubles in [0, 1) from the top 53 bits of :func:`hash64`."""
    return (hash64(seed, counter) >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)
