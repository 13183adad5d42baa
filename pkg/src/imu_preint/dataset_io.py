"""EuRoC-style CSV files, mask windows and fixed-length training segments.

Schemas (header line optional on IMU and ground-truth files, `#` allowed before it):

    imu.csv   timestamp_ns,wx,wy,wz,ax,ay,az
    gt.csv    timestamp_ns,px,py,pz,qw,qx,qy,qz[,vx,vy,vz[,...]]
    gps.csv   t,px,py,pz,sigma
    est.csv   t,px,py,pz,qw,qx,qy,qz,vx,vy,vz
    cov.csv   t,c00,c01,...,c88 (upper triangle, 45 values)

Integer nanosecond timestamps are parsed as integers and converted to seconds relative to
an origin (the file's first row unless another origin is given).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from imu_preint.errors import DatasetFormatError, InvalidArgumentError
from imu_preint.metrics import interpolate_states
from imu_preint.preintegration import ImuSequence, NavState, Trajectory
from imu_preint.sim import GpsStream
from imu_preint.utils import in_masks

logger = logging.getLogger(__name__)

IMU_COLUMNS = ["timestamp_ns", "wx", "wy", "wz", "ax", "ay", "az"]
GT_COLUMNS = ["timestamp_ns", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"]
GPS_COLUMNS = ["t", "px", "py", "pz", "sigma"]
STATE_COLUMNS = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"]
COV_COLUMNS = ["t"] + [f"c{i}{j}" for i in range(9) for j in range(i, 9)]

QUAT_TOLERANCE = 1e-3
GAP_FACTOR = 1.5


@dataclass(frozen=True, eq=False)
class Segment:
    """IMU samples [k, k+L) with ground-truth states at their start and end times."""

    imu: ImuSequence
    start: NavState
    end: NavState


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_table(path: Path, min_cols: int, max_cols: int | None = None) -> tuple[pd.DataFrame, int]:
    """Raw string table plus the file line number of its first data row."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"No such file: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline()
    if not first.strip():
        raise DatasetFormatError("empty file", path=path)
    head = first.lstrip("#").split(",")[0].strip()
    skip = 0 if _is_number(head) else 1
    try:
        frame = pd.read_csv(
            path, header=None, skiprows=skip, dtype=str, skipinitialspace=True, skip_blank_lines=True
        )
    except pd.errors.EmptyDataError as exc:
        raise DatasetFormatError("no data rows", path=path) from exc
    except pd.errors.ParserError as exc:
        raise DatasetFormatError(f"malformed row ({exc})", path=path) from exc
    if frame.empty:
        raise DatasetFormatError("no data rows", path=path)
    ncols = frame.shape[1]
    if ncols < min_cols or (max_cols is not None and ncols > max_cols):
        raise DatasetFormatError(f"expected {min_cols} columns, found {ncols}", path=path, row=skip + 1)
    return frame, skip + 1


def _numeric(frame: pd.DataFrame, cols: Sequence[int], path: Path, first_row: int) -> np.ndarray:
    block = frame.iloc[:, list(cols)]
    try:
        # str -> float through numpy is correctly rounded, so written values read back exactly
        values = block.to_numpy(dtype=str).astype(float)
    except ValueError:
        values = block.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values).all(axis=1)
    if bad.any():
        raise DatasetFormatError("malformed row", path=path, row=first_row + int(np.argmax(bad)))
    return values


def _timestamps_ns(column: pd.Series, path: Path, first_row: int) -> np.ndarray:
    stamps = []
    for k, raw in enumerate(column):
        try:
            stamps.append(int(str(raw).strip()))
        except ValueError as exc:
            raise DatasetFormatError(f"bad timestamp {raw!r}", path=path, row=first_row + k) from exc
    ns = np.array(stamps, dtype=np.int64)
    if len(ns) > 1:
        step = np.diff(ns)
        if np.any(step <= 0):
            row = first_row + int(np.argmax(step <= 0)) + 1
            raise DatasetFormatError("timestamps not strictly increasing", path=path, row=row)
    return ns


def _seconds(ns: np.ndarray, origin_ns: int) -> np.ndarray:
    return (ns - np.int64(origin_ns)).astype(float) / 1e9


def load_imu_csv(path: str | Path, origin_ns: int | None = None) -> ImuSequence:
    path = Path(path)
    frame, first_row = _read_table(path, 7, 7)
    ns = _timestamps_ns(frame.iloc[:, 0], path, first_row)
    values = _numeric(frame, range(1, 7), path, first_row)
    origin = int(ns[0]) if origin_ns is None else int(origin_ns)
    logger.debug("loaded %d IMU samples from %s", len(ns), path)
    return ImuSequence(_seconds(ns, origin), values[:, 0:3], values[:, 3:6], t0_ns=origin)


def load_groundtruth_csv(
    path: str | Path,
    origin_ns: int | None = None,
    quat_tolerance: float | None = QUAT_TOLERANCE,
) -> Trajectory:
    """Ground-truth states; quaternions are normalized, velocity derived when absent.

    `quat_tolerance=None` normalizes without checking how far |q| was from 1.
    """
    path = Path(path)
    frame, first_row = _read_table(path, 8)
    ns = _timestamps_ns(frame.iloc[:, 0], path, first_row)
    has_velocity = frame.shape[1] >= 11
    values = _numeric(frame, range(1, 11 if has_velocity else 8), path, first_row)
    q = values[:, 3:7]
    norms = np.linalg.norm(q, axis=1)
    if quat_tolerance is not None and np.any(np.abs(norms - 1.0) > quat_tolerance):
        row = first_row + int(np.argmax(np.abs(norms - 1.0) > quat_tolerance))
        raise DatasetFormatError("quaternion norm deviates from 1", path=path, row=row)
    if np.any(norms == 0.0):
        raise DatasetFormatError("zero quaternion", path=path, row=first_row + int(np.argmax(norms == 0.0)))
    origin = int(ns[0]) if origin_ns is None else int(origin_ns)
    t = _seconds(ns, origin)
    p = values[:, 0:3]
    if has_velocity:
        v = values[:, 7:10]
    elif len(t) > 1:
        v = np.gradient(p, t, axis=0)
    else:
        v = np.zeros_like(p)
    return Trajectory(t, q, v, p)


def load_gps_csv(path: str | Path) -> GpsStream:
    path = Path(path)
    frame, first_row = _read_table(path, 5, 5)
    values = _numeric(frame, range(5), path, first_row)
    if len(values) > 1 and np.any(np.diff(values[:, 0]) <= 0.0):
        row = first_row + int(np.argmax(np.diff(values[:, 0]) <= 0.0)) + 1
        raise DatasetFormatError("timestamps not strictly increasing", path=path, row=row)
    if np.any(values[:, 4] < 0.0):
        raise DatasetFormatError("negative sigma", path=path, row=first_row + int(np.argmax(values[:, 4] < 0.0)))
    return GpsStream(values[:, 0], values[:, 1:4], values[:, 4])


def load_state_csv(path: str | Path) -> Trajectory:
    path = Path(path)
    frame, first_row = _read_table(path, 11, 11)
    values = _numeric(frame, range(11), path, first_row)
    if len(values) > 1 and np.any(np.diff(values[:, 0]) <= 0.0):
        row = first_row + int(np.argmax(np.diff(values[:, 0]) <= 0.0)) + 1
        raise DatasetFormatError("timestamps not strictly increasing", path=path, row=row)
    return Trajectory(values[:, 0], values[:, 4:8], values[:, 8:11], values[:, 1:4])


def load_cov_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Times and full (N, 9, 9) covariances."""
    path = Path(path)
    frame, first_row = _read_table(path, 46, 46)
    values = _numeric(frame, range(46), path, first_row)
    iu = np.triu_indices(9)
    m = np.zeros((len(values), 9, 9))
    m[:, iu[0], iu[1]] = values[:, 1:]
    m[:, iu[1], iu[0]] = values[:, 1:]
    return values[:, 0], m


def _write(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False)
    logger.info("Wrote %d rows to %s", len(frame), path)
    return path


def _ns_column(t: np.ndarray, origin_ns: int) -> np.ndarray:
    return np.int64(origin_ns) + np.round(np.asarray(t) * 1e9).astype(np.int64)


def write_imu_csv(path: str | Path, imu: ImuSequence) -> Path:
    frame = pd.DataFrame(np.column_stack([imu.w, imu.a]), columns=IMU_COLUMNS[1:])
    frame.insert(0, "timestamp_ns", _ns_column(imu.t, imu.t0_ns))
    return _write(frame, path)


def write_groundtruth_csv(path: str | Path, traj: Trajectory, origin_ns: int = 0) -> Path:
    frame = pd.DataFrame(np.column_stack([traj.p, traj.q, traj.v]), columns=GT_COLUMNS[1:])
    frame.insert(0, "timestamp_ns", _ns_column(traj.t, origin_ns))
    return _write(frame, path)


def write_gps_csv(path: str | Path, gps: GpsStream) -> Path:
    return _write(pd.DataFrame(np.column_stack([gps.t, gps.p, gps.sigma]), columns=GPS_COLUMNS), path)


def write_state_csv(path: str | Path, traj: Trajectory) -> Path:
    data = np.column_stack([traj.t, traj.p, traj.q, traj.v])
    return _write(pd.DataFrame(data, columns=STATE_COLUMNS), path)


def write_cov_csv(path: str | Path, t: np.ndarray, cov: np.ndarray) -> Path:
    iu = np.triu_indices(9)
    data = np.column_stack([t, np.asarray(cov)[:, iu[0], iu[1]]])
    return _write(pd.DataFrame(data, columns=COV_COLUMNS), path)


def apply_masks(seq, masks: Iterable[Sequence[float]] | None):
    """Drop samples inside any [t0, t1] window.

    IMU samples keep their own dt, so the sample before a gap does not stretch across it.
    """
    masks = list(masks or ())
    if not masks:
        return seq
    return seq.subset(~in_masks(seq.t, masks))


def contiguous_runs(imu: ImuSequence) -> list[ImuSequence]:
    """Split at gaps, where a sample's interval does not reach the next sample."""
    if len(imu) == 0:
        return []
    ends = imu.t + imu.dts()
    nominal = float(np.median(imu.dts())) if len(imu) else 0.0
    breaks = np.flatnonzero(imu.t[1:] - ends[:-1] > (GAP_FACTOR - 1.0) * nominal + 1e-12) + 1
    bounds = np.concatenate([[0], breaks, [len(imu)]])
    return [imu.subset(slice(lo, hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]


def segments(
    imu: ImuSequence,
    gt: Trajectory,
    length: int,
    stride: int | None = None,
    masks: Iterable[Sequence[float]] | None = None,
) -> list[Segment]:
    """Fixed-length windows with ground truth interpolated at both ends.

    A window uses samples [k, k+L) and ground truth at t_k and t_{k+L-1} + dt_{k+L-1}.
    Windows that touch a mask, span a gap, or leave ground-truth coverage are dropped.
    """
    if length < 1:
        raise InvalidArgumentError("segment length must be at least 1")
    stride = length if stride is None else stride
    if stride < 1:
        raise InvalidArgumentError("segment stride must be at least 1")
    masks = list(masks or ())
    out: list[Segment] = []
    if len(gt) < 2:
        return out
    lo_gt, hi_gt = gt.t[0] - 1e-9, gt.t[-1] + 1e-9
    for run in contiguous_runs(apply_masks(imu, masks)):
        dts = run.dts()
        for k in range(0, len(run) - length + 1, stride):
            t_start = run.t[k]
            t_end = run.t[k + length - 1] + dts[k + length - 1]
            if t_start < lo_gt or t_end > hi_gt:
                continue
            if any(t0 <= t_end and t1 >= t_start for t0, t1 in masks):
                continue
            ends = interpolate_states(gt, [t_start, t_end])
            out.append(Segment(run.subset(slice(k, k + length)), ends[0], ends[1]))
    logger.debug("extracted %d segments of %d frames", len(out), length)
    return out
