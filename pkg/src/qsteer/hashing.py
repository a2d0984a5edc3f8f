"""Stable 64-bit hashing, independent of PYTHONHASHSEED.

splitmix64-style mixing with scalar and numpy vectorized variants. The same
formulas back feature hashing and deterministic per-site RNG seeding, so they
must never change once decision logs or models have been written.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_C1 = 0x9E3779B97F4A7C15
_C2 = 0xBF58476D1CE4E5B9
_C3 = 0x94D049BB133111EB
_CMB = 0xD1B54A32D192ED03


def mix64(z: int) -> int:
    z = (z + _C1) & _MASK
    z = ((z ^ (z >> 30)) * _C2) & _MASK
    z = ((z ^ (z >> 27)) * _C3) & _MASK
    return z ^ (z >> 31)


def combine(a: int, b: int) -> int:
    return mix64(a ^ ((b * _CMB) & _MASK))


def stable_hash(text: str) -> int:
    """64-bit hash of a string, stable across processes."""
    h = 0x632BE59BD9B4E019
    for byte in text.encode("utf-8"):
        h = combine(h, byte)
    return h


def mix64_np(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z += np.uint64(_C1)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_C2)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_C3)
    return z ^ (z >> np.uint64(31))


def combine_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return mix64_np(a ^ (b * np.uint64(_CMB)))
