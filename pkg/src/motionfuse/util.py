"""Filesystem, hashing and worker-pool helpers."""

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def worker_count():
    """Threads allowed for per-clip parallel work, capped by TM_THREADS."""
    raw = os.environ.get("TM_THREADS", "1").strip()
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def parallel_map(fn, items):
    """Map fn over items with up to worker_count() threads; results keep input order."""
    items = list(items)
    n = min(worker_count(), max(1, len(items)))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def checksum(arrays):
    """SHA-256 over the raw float64 bytes of a sequence of arrays."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_text(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
