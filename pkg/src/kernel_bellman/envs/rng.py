"""Portable random streams.

Every stream is a Philox-4x64 counter-based generator keyed by a
``SeedSequence`` built from ``(seed, *path)``. ``stream(seed, k)`` is shard
k of a collection run; distinct paths give statistically independent
streams and the same path always replays the same numbers on every
platform.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, path)])))
