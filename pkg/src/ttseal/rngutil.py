"""Deterministic RNG stream derivation.

Every stochastic routine draws from a Generator derived from a master
seed plus a tuple of context labels (ints or short strings).  Streams are
therefore independent of call order and reproducible across platforms.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _as_entropy(part: int | str) -> int:
    if isinstance(part, (bool, float)):
        raise TypeError(f"rng context parts must be int or str, got {part!r}")
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK64
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"rng context parts must be int or str, got {part!r}")


def derive_rng(seed: int, *context: int | str) -> np.random.Generator:
    """Generator for the stream identified by (seed, *context)."""
    entropy = [_as_entropy(seed)] + [_as_entropy(p) for p in context]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *context: int | str) -> int:
    """63-bit child seed for handing to APIs that take a plain seed."""
    return int(derive_rng(seed, *context).integers(0, 1 << 63))
