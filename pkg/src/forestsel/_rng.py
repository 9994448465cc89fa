"""Seed derivation.

Every random draw in the package comes from a generator keyed on a master
seed plus a tuple of integer keys (tree index, variable index, fold, ...),
never from a shared stream. That keeps parallel and sequential runs
bit-identical.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k)


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``. String keys are hashed."""
    return np.random.default_rng(seed_sequence(seed, *keys))


def derive_seed(seed: int, *keys) -> int:
    """Derive a non-negative 63-bit integer seed from ``(seed, *keys)``."""
    state = seed_sequence(seed, *keys).generate_state(1, np.uint64)[0]
    return int(state) >> 1
