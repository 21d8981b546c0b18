"""Deterministic seeding helpers.

Every experiment derives all randomness from a single integer seed.
Components draw from named sub-streams (split/init/attack/training/...)
so that adding a draw in one component never disturbs another.
"""

from __future__ import annotations

import zlib

import numpy as np


def subseed(seed: int, name: str) -> np.random.SeedSequence:
    """Seed sequence for the named sub-stream of an experiment seed."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])


def rng_for(seed: int, name: str) -> np.random.Generator:
    """Generator for the named sub-stream. Same (seed, name) -> same stream."""
    return np.random.default_rng(subseed(seed, name))
