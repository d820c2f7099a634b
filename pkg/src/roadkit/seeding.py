"""Deterministic seeding helpers.

Per-image randomness is derived from (global seed, image id) through a
stable 64-bit mix, so results never depend on processing order, worker
count, or Python's salted ``hash``.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step; a well-mixed 64-bit permutation."""
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def stable_id_hash(text: str) -> int:
    """Stable 64-bit hash of a string (blake2b, platform independent)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def mix64(seed: int, key: int) -> int:
    """Combine a seed and a key into one well-mixed 64-bit value."""
    return splitmix64(splitmix64(seed & _MASK) ^ (key & _MASK))


def rng_for(seed: int, image_id: str) -> np.random.Generator:
    """Deterministic per-image random generator."""
    return np.random.default_rng(mix64(seed, stable_id_hash(image_id)))
