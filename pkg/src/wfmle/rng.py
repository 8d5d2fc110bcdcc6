"""Counter-based random streams.

Every stream is addressed by a tuple of integers (for example contribution,
sample, purpose) under one master seed, so a draw never depends on how many
other draws were made before it or on which process made them.
"""
from __future__ import annotations

import numpy as np

# purposes
M_DRAW = 0
POISSON = 1
BRIDGE = 2
BOOTSTRAP = 3
SIMULATE = 4
OPTIMIZER = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for ``key`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
