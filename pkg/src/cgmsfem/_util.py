"""Internal helpers: seeded random substreams and a tiny parallel map."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

# Stream tags keep independent random draws on disjoint substreams of one
# master seed.  Each (seed, tag, *indices) tuple seeds its own generator, so
# realization i is reproducible independently of how many are generated.
STREAM_INCLUSION = 1
STREAM_LOGSINE = 2
STREAM_BOUNDARY = 3
STREAM_PROBE = 4
STREAM_KMEANS = 5


def substream(seed, *path):
    """Generator for the substream identified by (seed, *path), all ints >= 0."""
    keys = [int(seed), *(int(p) for p in path)]
    if any(k < 0 for k in keys):
        raise ValueError(f"substream keys must be non-negative, got {keys}")
    return np.random.default_rng(keys)


def pmap(fn, items, threads=1):
    """Map preserving input order, optionally on a thread pool.

    Tasks must be independent and pure; results are gathered in input order,
    so the output does not depend on the thread count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
