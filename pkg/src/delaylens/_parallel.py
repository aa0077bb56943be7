"""Process-wide worker cap and an order-preserving parallel map."""

import os
from concurrent.futures import ThreadPoolExecutor

_threads = None


def set_threads(n):
    global _threads
    if n is not None and int(n) < 1:
        raise ValueError("threads must be >= 1")
    _threads = None if n is None else int(n)


def get_threads():
    if _threads is not None:
        return _threads
    env = os.environ.get("DELAYLENS_THREADS")
    if env:
        return max(1, int(env))
    return 1


def pmap(fn, items):
    """``list(map(fn, items))``, spread over at most ``get_threads()`` threads."""
    items = list(items)
    n = get_threads()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
