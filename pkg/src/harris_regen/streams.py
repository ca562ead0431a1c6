"""Reproducible random streams.

Every replication gets its own Philox (counter-based) generator keyed on
``(master_seed, index, tag)``, so results never depend on scheduling order.
"""

from __future__ import annotations

import zlib

import numpy as np

TAG_SIMULATE = "simulate"
TAG_CONSTANTS = "constants"
TAG_CYCLES = "cycles"


def _tag_word(tag: str | int) -> int:
    if isinstance(tag, int):
        return tag & 0xFFFFFFFF
    return zlib.crc32(tag.encode("utf-8"))


def stream(master_seed: int, index: int = 0, tag: str | int = TAG_SIMULATE) -> np.random.Generator:
    """Return the generator for replication ``index`` under ``master_seed``."""
    if master_seed < 0 or index < 0:
        raise ValueError("master_seed and index must be non-negative")
    seed_words = [master_seed & 0xFFFFFFFF, (master_seed >> 32) & 0xFFFFFFFF, index, _tag_word(tag)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed_words)))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return stream(int(rng))
