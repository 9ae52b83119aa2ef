"""Deterministic seed derivation.

Every random stream in the package is a ``numpy.random.Generator`` backed by
PCG64. Sub-stream seeds are derived from a 64-bit master seed and a tuple of
tags: the SHA-256 digest of ``"<master>/<tag0>/<tag1>/..."`` (UTF-8, tags
formatted with ``str``) is truncated to its first 8 bytes, read big-endian.
The resulting integer seeds ``numpy.random.PCG64`` directly.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(master: int, *tags: object) -> int:
    text = "/".join([str(int(master) & MASK64), *map(str, tags)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stream(master: int, *tags: object) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *tags)))


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x: np.ndarray) -> np.ndarray:
    """Vectorised SplitMix64 finaliser on uint64 arrays (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hashed_uniform(key: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Uniform(0, 1) value per index pair, a pure function of ``(key, i, j)``.

    Used for per-link draws that must not depend on which links happen to be
    evaluated. Never returns exactly 0 or 1.
    """
    i = np.asarray(i, dtype=np.uint64)
    j = np.asarray(j, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = splitmix64(splitmix64(np.uint64(key & MASK64) ^ i) ^ (j * _GOLDEN))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / (1 << 53))
