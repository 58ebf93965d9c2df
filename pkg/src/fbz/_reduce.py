"""Deterministic chunked reductions.

The chunk plan depends only on the problem size, never on the thread count,
and partial sums are combined with ``math.fsum``. Results are therefore
bit-identical for any number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

DEFAULT_CHUNK = 256


def chunk_bounds(n: int, chunk: int = DEFAULT_CHUNK) -> list[tuple[int, int]]:
    return [(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def map_chunks(fn: Callable[[int, int], object], n: int, chunk: int = DEFAULT_CHUNK,
               threads: int = 1) -> list:
    """Apply ``fn(start, stop)`` to every chunk, returning results in chunk order."""
    bounds = chunk_bounds(n, chunk)
    if threads <= 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda ab: fn(*ab), bounds))


def fsum_parts(parts: Sequence) -> float | np.ndarray:
    """Exactly rounded sum of scalar or equal-length vector partials."""
    if len(parts) == 0:
        return 0.0
    first = np.asarray(parts[0])
    if first.ndim == 0:
        return math.fsum(float(p) for p in parts)
    stacked = np.vstack([np.asarray(p, dtype=float) for p in parts])
    return np.array([math.fsum(col) for col in stacked.T])


def chunked_sum(fn: Callable[[int, int], object], n: int, chunk: int = DEFAULT_CHUNK,
                threads: int = 1):
    return fsum_parts(map_chunks(fn, n, chunk, threads))
