"""Explicit-key random numbers on top of numpy's counter-based Philox generator.

A key is a ``uint64`` array of shape ``(2,)`` (128 bits).  Keys are never
mutated; ``split`` derives fresh keys from the Philox counter stream of the
parent, so the same key always yields the same children and the same draws.
"""
from __future__ import annotations

import numpy as np

KEY_SHAPE = (2,)


def key(seed: int) -> np.ndarray:
    """Build a root key from an integer seed."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    words = np.random.SeedSequence(int(seed)).generate_state(2, dtype=np.uint64)
    return words.astype(np.uint64)


def _check(k) -> np.ndarray:
    k = np.asarray(k)
    if k.shape != KEY_SHAPE or k.dtype != np.uint64:
        raise TypeError(f"expected a uint64 key of shape {KEY_SHAPE}, got {k.dtype}{k.shape}")
    return k


def split(k, num: int = 2) -> np.ndarray:
    """Derive ``num`` independent child keys, returned as an array ``(num, 2)``."""
    k = _check(k)
    # counter offset 1 keeps child streams disjoint from draws made by generator(k)
    bitgen = np.random.Philox(key=k, counter=np.array([0, 0, 0, 1], dtype=np.uint64))
    return bitgen.random_raw(2 * num).astype(np.uint64).reshape(num, 2)


def fold_in(k, data: int) -> np.ndarray:
    """Deterministically mix an integer into a key."""
    k = _check(k)
    bitgen = np.random.Philox(key=k, counter=np.array([0, 0, int(data) & (2**64 - 1), 2], dtype=np.uint64))
    return bitgen.random_raw(2).astype(np.uint64)


def generator(k) -> np.random.Generator:
    """A numpy Generator whose stream is fully determined by ``k``."""
    return np.random.Generator(np.random.Philox(key=_check(k)))
