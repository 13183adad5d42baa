"""Worker-count policy and ordered thread-pool mapping for independent numeric work."""

from __future__ import annotations

import contextlib
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Iterator, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "IMU_PREINT_THREADS"

_local = threading.local()


def _max_concurrent() -> int:
    """Concurrency limit: cpu_count - 1, at least 1."""
    n = os.cpu_count() or 1
    return max(1, n - 1)


def max_workers() -> int:
    """Workers available to library calls on this thread.

    `single_threaded()` wins, then the `IMU_PREINT_THREADS` environment variable,
    then cpu_count - 1.
    """
    if getattr(_local, "pinned", False):
        return 1
    raw = os.getenv(THREADS_ENV, "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning("Ignoring non-integer %s=%r", THREADS_ENV, raw)
    return _max_concurrent()


@contextlib.contextmanager
def single_threaded() -> Iterator[None]:
    """Pin library calls made on this thread to one worker."""
    previous = getattr(_local, "pinned", False)
    _local.pinned = True
    try:
        yield
    finally:
        _local.pinned = previous


def chunk_bounds(n: int, parts: int) -> list[tuple[int, int]]:
    """Split range(n) into at most `parts` contiguous, near-equal [start, stop) chunks."""
    if n <= 0:
        return []
    parts = max(1, min(parts, n))
    step, extra = divmod(n, parts)
    bounds = []
    start = 0
    for i in range(parts):
        stop = start + step + (1 if i < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """Apply `fn` to every item, results in input order.

    Runs inline when only one worker is available or there is a single item.
    """
    seq: Sequence[T] = items if isinstance(items, Sequence) else list(items)
    workers = max_workers() if workers is None else max(1, workers)
    if workers == 1 or len(seq) <= 1:
        return [fn(item) for item in seq]
    with ThreadPoolExecutor(max_workers=min(workers, len(seq))) as pool:
        return list(pool.map(fn, seq))
