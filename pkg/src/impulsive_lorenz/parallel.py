"""Deterministic seeding and ordered parallel map.

Seed ``i`` of a run with master seed ``m`` always uses the stream
``SeedSequence(m, spawn_key=(i,))``, which is what ``SeedSequence(m).spawn``
would hand out as its ``i``-th child.  Work is split into blocks of seed
indices; results are concatenated in block order so the output does not depend
on how many workers ran.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence

import numpy as np


def seed_sequence(master: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=(int(index),))


def rng_for(master: int, index: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master, index))


def seed_blocks(start: int, count: int, block: int) -> list[range]:
    return [range(a, min(a + block, start + count)) for a in range(start, start + count, block)]


def map_ordered(fn: Callable, tasks: Sequence, workers: int = 1) -> list:
    """``[fn(t) for t in tasks]``, optionally on a process pool, order preserved."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def uniform_starts(master: int, indices: Iterable[int], low: float = -1.0,
                   high: float = 1.0) -> np.ndarray:
    """One uniform start point on the square per seed index."""
    return np.array([rng_for(master, i).uniform(low, high, 2) for i in indices])
