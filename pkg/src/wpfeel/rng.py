"""Addressable random streams.

Every random draw in the package comes from a Philox (counter-based)
generator keyed by ``(seed, purpose, *coordinates)``. A device in a given
round therefore always sees the same numbers, whatever order or process
evaluates it.
"""
from __future__ import annotations

import numpy as np

# Purpose tags keep independent uses of one seed apart.
CHANNEL = 1
BATCH = 2
TASK = 3
DEVICES = 4
ORACLE = 5
PROBES = 6


def substream(seed: int, purpose: int, *coords: int) -> np.random.Generator:
    """Generator for the substream addressed by ``(seed, purpose, *coords)``."""
    key = (int(purpose),) + tuple(int(c) for c in coords)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
