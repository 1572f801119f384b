"""Seeded counter-based substreams.

Every random draw in the toolkit goes through :func:`substream`, keyed by
``(seed, purpose, index)``. Resampling work is cut into fixed-size blocks
with one Philox substream per block, so results do not depend on how many
threads evaluate the blocks or in which order they finish.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

BLOCK_SIZE = 1000

# purpose tags keep streams for different jobs disjoint under one seed
BOOTSTRAP = 1
PERMUTATION = 2
CONTROL = 3
SYNTH = 4
FOLD_BOOTSTRAP = 5


def tag(name: str) -> int:
    """Stable integer tag for a free-form purpose string."""
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, *key: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def blocks(total: int, size: int = BLOCK_SIZE) -> list[tuple[int, int]]:
    """(block_index, count) pairs covering ``total`` replicates."""
    out = []
    for i, start in enumerate(range(0, total, size)):
        out.append((i, min(size, total - start)))
    return out


def run_blocks(
    fn: Callable[[int, int], np.ndarray],
    total: int,
    threads: int = 1,
    size: int = BLOCK_SIZE,
) -> np.ndarray:
    """Evaluate ``fn(block_index, count)`` per block and concatenate in block order."""
    plan = blocks(total, size)
    if threads <= 1 or len(plan) <= 1:
        parts: Sequence[np.ndarray] = [fn(i, n) for i, n in plan]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda p: fn(*p), plan))
    if not parts:
        return np.empty(0)
    return np.concatenate(parts)
