"""Path-chunk parallelism.

Results never depend on the worker count: noise is a function of global path
indices and chunk results are reassembled in chunk order.
"""

import os
from concurrent.futures import ThreadPoolExecutor

WORKERS_ENV = "RTCI_MAX_WORKERS"
DEFAULT_CHUNK = 2048


def worker_count(requested=None):
    """Number of threads to use: ``requested``, capped by ``$RTCI_MAX_WORKERS``."""
    n = os.cpu_count() or 1
    if requested is not None:
        n = int(requested)
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        n = min(n, int(cap))
    return max(1, n)


def chunks(n_paths, chunk_size=DEFAULT_CHUNK):
    """``(start, count)`` pairs covering ``range(n_paths)``."""
    chunk_size = max(1, int(chunk_size))
    return [(s, min(chunk_size, n_paths - s)) for s in range(0, n_paths, chunk_size)]


def map_chunks(fn, n_paths, chunk_size=DEFAULT_CHUNK, workers=None):
    """Apply ``fn(start, count)`` to every chunk; results come back in chunk order."""
    parts = chunks(n_paths, chunk_size)
    workers = worker_count(workers)
    if workers == 1 or len(parts) == 1:
        return [fn(s, c) for s, c in parts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda sc: fn(*sc), parts))
