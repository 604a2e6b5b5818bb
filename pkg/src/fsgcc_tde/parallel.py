"""Order-preserving process fan-out capped by FSGCC_THREADS."""

from __future__ import annotations

import multiprocessing as mp
import os


def worker_count() -> int:
    env = os.environ.get("FSGCC_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"FSGCC_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ValueError("FSGCC_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def pmap(fn, items, workers: int | None = None, chunksize: int = 1) -> list:
    """``[fn(x) for x in items]``, spread over worker processes when more than one is allowed."""
    items = list(items)
    n = min(workers or worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with mp.get_context("fork").Pool(n) as pool:
        return pool.map(fn, items, chunksize)
