"""Order-preserving parallel map.

Results always come back in input order and every task carries its own seed,
so the worker count never changes an answer.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


def pmap(func, items, workers: int | None = 1) -> list:
    items = list(items)
    if workers is None:
        workers = default_workers()
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items, chunksize=max(1, len(items) // (4 * workers))))
