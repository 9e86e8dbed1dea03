"""Shared plumbing: derived random streams, atomic file writes, thread maps."""

import hashlib
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np


def derive_rng(master_seed, *keys):
    """Independent Generator keyed by (master_seed, *keys).

    Streams are stable across platforms and independent of call order, so
    per-utterance work can be parallelized without changing results.
    """
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for k in keys:
        h.update(b"\x1f")
        h.update(str(k).encode())
    seed = int.from_bytes(h.digest()[:16], "little")
    return np.random.Generator(np.random.PCG64(seed))


@contextmanager
def atomic_write(path, mode="wb"):
    """Write to a temp file and rename into place; no partial outputs."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def thread_map(fn, items, threads=1):
    """Ordered map over items, optionally on a thread pool.

    Items must be independent; output order matches input order regardless
    of thread count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
