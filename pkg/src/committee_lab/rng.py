"""Deterministic random streams.

Every stream is a pure function of integer keys, so any trial, block or call
can be replayed in isolation and results do not depend on execution order.
"""

from __future__ import annotations

import numpy as np

# Role codes mixed into stream keys.
WORLD = 0
PROPOSE = 1
CRITIC = 2
COMPARE = 3
ACTION = 4
POOL = 5
SEPARATION = 6


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return a fresh generator keyed by ``(seed, *keys)``."""
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("stream keys must be non-negative integers")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))
