import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def thread_count() -> int:
    """Worker cap from ``ASLKS_THREADS`` (0 or unset = one per CPU)."""
    raw = os.environ.get("ASLKS_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def map_batch(fn, x: np.ndarray, *rest: np.ndarray) -> np.ndarray:
    """Apply ``fn`` to contiguous batch slices and concatenate along axis 0.

    Each output element is written by exactly one task, and ``fn`` must be
    elementwise-deterministic in its batch slice, so the result is bitwise
    independent of the worker count.
    """
    n = x.shape[0]
    workers = min(thread_count(), n)
    if workers <= 1:
        return fn(x, *rest)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    chunks = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(lambda ab: fn(x[ab[0]:ab[1]], *(r[ab[0]:ab[1]] for r in rest)), chunks))
    return np.concatenate(parts, axis=0)
