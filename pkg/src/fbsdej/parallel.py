"""Deterministic chunked execution.

Work over particles is split into fixed-size chunks and recombined in chunk
order.  The chunk size never depends on the worker count, so results are
bit-identical whether chunks run serially or on a thread pool.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

CHUNK_SIZE = 256

T = TypeVar("T")


def chunk_ranges(n: int, chunk: int = CHUNK_SIZE) -> list[tuple[int, int]]:
    """Half-open index ranges [(0, c), (c, 2c), ...] covering range(n)."""
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def run_chunked(
    fn: Callable[[int, int, int], T],
    n: int,
    workers: int = 1,
    chunk: int = CHUNK_SIZE,
) -> list[T]:
    """Apply ``fn(chunk_index, lo, hi)`` to every chunk, results in chunk order.

    ``workers`` only controls scheduling; the outputs (and any floating-point
    reduction done over them in order) do not depend on it.
    """
    ranges = chunk_ranges(n, chunk)
    if workers <= 1 or len(ranges) <= 1:
        return [fn(c, lo, hi) for c, (lo, hi) in enumerate(ranges)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, c, lo, hi) for c, (lo, hi) in enumerate(ranges)]
        return [f.result() for f in futures]


def ordered_sum(parts: Sequence[T]) -> T:
    """Left-to-right sum of chunk partials (fixed association order)."""
    total = None
    for p in parts:
        total = p if total is None else total + p
    if total is None:
        raise ValueError("ordered_sum needs at least one partial")
    return total
