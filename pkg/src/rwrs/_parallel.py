"""Deterministic fan-out of sample blocks over a thread pool.

Work is cut into fixed blocks of sample ids independent of the thread count;
each block writes its own slice of the result, so the output is the same
for any number of threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK = 256


def default_threads() -> int:
    env = os.environ.get("RWRS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def map_blocks(fn, count: int, threads: int = 1, block: int = BLOCK) -> np.ndarray:
    """Concatenate ``fn(ids)`` over consecutive id blocks covering ``range(count)``.

    ``fn`` must return an array whose first axis matches ``ids``.
    """
    ids = np.arange(count, dtype=np.int64)
    chunks = [ids[i : i + block] for i in range(0, count, block)]
    if not chunks:
        return fn(ids)
    if threads <= 1 or len(chunks) == 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    return np.concatenate(parts)
