"""Deterministic RNG streams derived from (seed, key, ...) tuples."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, float):
        part = repr(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; string keys are hashed.

    Streams for distinct key tuples are statistically independent, so work
    items (trials, restarts, instances) can be evaluated in any order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *keys) -> int:
    """A 63-bit integer seed that is a pure function of ``(seed, *keys)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
