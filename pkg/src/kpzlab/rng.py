"""Counter-based random streams keyed by (seed, purpose, index).

Every random draw in the package comes from a Philox generator whose key is
derived from the user seed plus a fixed tuple of integers, so results do not
depend on evaluation order or on how work is split across workers.
"""

from __future__ import annotations

import zlib

import numpy as np

# Paths are generated in blocks of this size, each with its own stream.
PATH_BLOCK = 4096


def _tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode())


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, *index)``."""
    if seed is None or int(seed) < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    ss = np.random.SeedSequence([int(seed), _tag(purpose), *map(int, index)])
    return np.random.Generator(np.random.Philox(ss))


def path_blocks(n_paths: int) -> list[tuple[int, int]]:
    """``(start, stop)`` ranges covering ``n_paths`` in fixed-size blocks."""
    if n_paths <= 0:
        raise ValueError(f"n_paths must be positive, got {n_paths}")
    return [(a, min(a + PATH_BLOCK, n_paths)) for a in range(0, n_paths, PATH_BLOCK)]
