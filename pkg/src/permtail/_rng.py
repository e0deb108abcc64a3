"""Seeded random streams.

All randomness goes through Philox (a counter-based generator) keyed by a
base seed plus integer stream keys, so a value drawn for ``(seed, test, k)``
does not depend on scheduling or on what was drawn before.
"""
from __future__ import annotations

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
