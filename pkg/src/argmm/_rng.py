"""Seed-stream derivation.

Every random draw in the package comes from a generator derived from one
master seed plus a tuple of purpose tags, so that adding samples to one
stream never perturbs another.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    if isinstance(tag, float):
        tag = repr(tag)
    return zlib.crc32(str(tag).encode("utf-8"))


def derive_seed(seed: int, *tags) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_tag_to_int(t) for t in tags))


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """Return an independent generator for ``(seed, *tags)``."""
    return np.random.default_rng(derive_seed(seed, *tags))


def complex_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Draw circularly-symmetric CN(0, 1) samples."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)
