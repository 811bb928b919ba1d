"""Seed-derived random substreams.

Every consumer of randomness gets its own generator keyed by
``(seed, stream tag, *indices)``, so results never depend on call order.
"""
from __future__ import annotations

import numpy as np

INIT = 0
SHUFFLE = 1
DELTA = 2
SHOTS = 3
DATA = 4


def substream(seed: int, tag: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag, *map(int, key)]))
