"""Thread-pool mapping bounded by the GBMSTAB_THREADS environment variable."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "GBMSTAB_THREADS"


def thread_count() -> int:
    """Worker count from GBMSTAB_THREADS (default 1; malformed values fall back to 1)."""
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def map_ordered(func, items, threads: int | None = None) -> list:
    """``[func(x) for x in items]``, possibly on threads; result order always matches input."""
    items = list(items)
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
