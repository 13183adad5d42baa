"""Log-depth inclusive scans over associative operations.

Layer i (offset k = 2**i) replaces every element at index >= k by `op(x[j - k], x[j])`,
reading only values from the previous layer. After ceil(log2 N) layers element j holds
`seq[0] op ... op seq[j]`. Within a layer the updates are independent, so long layers are
split into chunks and run on a thread pool; chunks write disjoint slices of a fresh buffer,
which keeps the output identical to the single-threaded result.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from imu_preint import parallel
from imu_preint.lie_so3 import quat_mul

logger = logging.getLogger(__name__)

PARALLEL_THRESHOLD = 256

BinaryOp = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class ScanTrace:
    """Instrumentation filled in by `inclusive_scan`."""

    layers: int = 0
    offsets: list[int] = field(default_factory=list)
    chunked_layers: int = 0


def _layer(op: BinaryOp, prev: np.ndarray, k: int, workers: int) -> np.ndarray:
    n = prev.shape[0]
    nxt = prev.copy()
    count = n - k
    if count < PARALLEL_THRESHOLD or workers == 1:
        nxt[k:] = op(prev[:-k], prev[k:])
        return nxt

    bounds = parallel.chunk_bounds(count, workers)

    def run(bound: tuple[int, int]) -> None:
        lo, hi = bound
        nxt[k + lo : k + hi] = op(prev[lo:hi], prev[k + lo : k + hi])

    parallel.map_ordered(run, bounds, workers=workers)
    return nxt


def inclusive_scan(
    op: BinaryOp,
    seq,
    *,
    trace: ScanTrace | None = None,
    workers: int | None = None,
) -> np.ndarray:
    """Inclusive scan of `seq` along its first axis.

    `op(earlier, later)` must be associative and vectorized over the leading axis.
    Returns a new array; the input is not modified.
    """
    out = np.array(seq, dtype=float, copy=True)
    n = out.shape[0] if out.ndim else 0
    if n <= 1:
        return out
    workers = parallel.max_workers() if workers is None else max(1, workers)

    i = 0
    while (1 << i) < n:
        k = 1 << i
        out = _layer(op, out, k, workers)
        if trace is not None:
            trace.layers += 1
            trace.offsets.append(k)
            if n - k >= PARALLEL_THRESHOLD and workers > 1:
                trace.chunked_layers += 1
        i += 1
    logger.debug("scan of %d elements finished in %d layers", n, i)
    return out


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b


def cumprod_so3(quats, **kwargs) -> np.ndarray:
    """Cumulative quaternion products q0 ⊗ q1 ⊗ ... ⊗ qk for every k."""
    return inclusive_scan(quat_mul, quats, **kwargs)


def cumsum_vec3(vecs, **kwargs) -> np.ndarray:
    """Cumulative vector sums."""
    return inclusive_scan(np.add, vecs, **kwargs)


def cummatmul9(mats, *, suffix: bool = False, **kwargs) -> np.ndarray:
    """Cumulative matrix products.

    Left-fold mode: result[k] = M0 @ M1 @ ... @ Mk.
    Suffix mode:    result[k] = M[N-1] @ ... @ M[k+1] @ M[k].
    """
    mats = np.asarray(mats, dtype=float)
    if not suffix:
        return inclusive_scan(_matmul, mats, **kwargs)
    return inclusive_scan(_matmul, mats[::-1], **kwargs)[::-1].copy()
