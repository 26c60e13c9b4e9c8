"""Counter-based deterministic PRNG (split-mix finalizer over a 64-bit counter).

Every random tensor in the project is a pure function of (shape, seed), so
runs reproduce bit-for-bit regardless of draw order or platform.  Task files
may say ``data_gen: torch.rand``; that token is mapped onto this generator.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def raw_uint64(seed: int, count: int) -> np.ndarray:
    """First `count` outputs of the split-mix stream for `seed`."""
    with np.errstate(over="ignore"):
        counters = (np.arange(1, count + 1, dtype=np.uint64) * _GOLDEN) + np.uint64(
            seed & 0xFFFFFFFFFFFFFFFF
        )
        return _mix64(counters)


def uniform(shape, seed: int) -> np.ndarray:
    """Deterministic float32 uniforms in [0, 1) with the given shape."""
    count = int(np.prod(shape)) if len(tuple(shape)) else 1
    bits = raw_uint64(seed, count)
    vals = (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
    return vals.astype(np.float32).reshape(tuple(shape))


def derive_seed(seed: int, *tags) -> int:
    """Mix a base seed with string/int tags into a new 64-bit seed."""
    acc = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for tag in tags:
            if isinstance(tag, str):
                h = np.uint64(0xCBF29CE484222325)
                for ch in tag.encode("utf-8"):
                    h = (h ^ np.uint64(ch)) * np.uint64(0x100000001B3)
            else:
                h = np.uint64(int(tag) & 0xFFFFFFFFFFFFFFFF)
            acc = _mix64(acc + _GOLDEN + h)
    return int(acc)
