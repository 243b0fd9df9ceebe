"""Order-deterministic parallel map over replication indices."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

from threadpoolctl import threadpool_limits

CHUNK = 25


def _run_chunk(fn: Callable, indices: Sequence[int]):
    with threadpool_limits(1):
        return [fn(i) for i in indices]


def ordered_map(fn: Callable[[int], object], count: int, threads: int = 1) -> list:
    """Evaluate ``fn(i)`` for i in range(count), returning results in index order.

    Work is cut into fixed-size chunks independent of ``threads`` and BLAS
    runs single-threaded inside every chunk; each result depends only on
    its index, so the output does not vary with the worker count.
    """
    chunks = [list(range(s, min(s + CHUNK, count))) for s in range(0, count, CHUNK)]
    if threads <= 1 or len(chunks) <= 1:
        out: list = []
        for c in chunks:
            out.extend(_run_chunk(fn, c))
        return out
    out = []
    with ProcessPoolExecutor(max_workers=min(threads, len(chunks))) as ex:
        for part in ex.map(_run_chunk, [fn] * len(chunks), chunks):
            out.extend(part)
    return out
