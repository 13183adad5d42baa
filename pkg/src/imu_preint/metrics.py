"""Trajectory error metrics over time-aligned estimate/ground-truth pairs.

Relative metrics compare motion over a fixed interval: for every sample i, the partner j is
the sample whose time is nearest to t_i + interval, accepted when within half a nominal
sample period. Rotation metrics are in degrees. Below, p/R are the estimate and p̂/R̂ the
ground truth.

    ROE    mean |log(R̂_ij^T R_ij)|,  R_ij = R_i^T R_j
    R-RMSE rms of the same
    RPE    mean |p̂_j - p̂_i - R̂_i R_i^T (p_j - p_i)|
    P-RMSE rms of the same
    ATE    mean |p - p̂|, no alignment
    VEL    mean |v - v̂|
    DRIFT  |p - p̂| at the last pair
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import interp1d
from scipy.spatial.transform import Rotation as ScipyRotation
from scipy.spatial.transform import Slerp

from imu_preint.errors import InvalidArgumentError
from imu_preint.lie_so3 import quat_conj, quat_log, quat_mul, quat_normalize, quat_rotate
from imu_preint.preintegration import Trajectory
from imu_preint.utils import in_masks

logger = logging.getLogger(__name__)

TIME_TOL = 1e-9

METRIC_NAMES = ("roe", "rpe", "rrmse", "prmse", "ate", "vel", "drift")


@dataclass(frozen=True)
class MetricResult:
    value: float
    mean: float
    rmse: float
    count: int
    interval_s: float | None


def _wxyz_to_xyzw(q: np.ndarray) -> np.ndarray:
    return q[..., [1, 2, 3, 0]]


def _xyzw_to_wxyz(q: np.ndarray) -> np.ndarray:
    return q[..., [3, 0, 1, 2]]


def interpolate_states(gt: Trajectory, times) -> Trajectory:
    """Ground truth at `times`: linear for position/velocity, slerp for rotation.

    Times must lie inside the ground-truth span.
    """
    if len(gt) < 2:
        raise InvalidArgumentError("interpolation needs at least 2 ground-truth samples")
    times = np.clip(np.asarray(times, dtype=float), gt.t[0], gt.t[-1])
    p = interp1d(gt.t, gt.p, axis=0, assume_sorted=True)(times)
    v = interp1d(gt.t, gt.v, axis=0, assume_sorted=True)(times)
    slerp = Slerp(gt.t, ScipyRotation.from_quat(_wxyz_to_xyzw(gt.q)))
    q = quat_normalize(_xyzw_to_wxyz(slerp(times).as_quat()))
    return Trajectory(times, q, v, p)


def time_align(
    est: Trajectory,
    gt: Trajectory,
    masks: Iterable[Sequence[float]] | None = None,
) -> tuple[Trajectory, Trajectory]:
    """Pair every usable estimate with ground truth interpolated at its timestamp."""
    if len(gt) < 2:
        raise InvalidArgumentError("time alignment needs at least 2 ground-truth samples")
    inside = (est.t >= gt.t[0] - TIME_TOL) & (est.t <= gt.t[-1] + TIME_TOL)
    keep = inside & ~in_masks(est.t, masks)
    dropped = int(len(est) - keep.sum())
    if dropped:
        logger.debug("time_align dropped %d of %d estimates", dropped, len(est))
    paired_est = est.subset(keep)
    paired_gt = interpolate_states(gt, paired_est.t)
    return paired_est, Trajectory(paired_est.t, paired_gt.q, paired_gt.v, paired_gt.p)


def _check_paired(est: Trajectory, gt: Trajectory) -> None:
    if len(est) != len(gt):
        raise InvalidArgumentError(f"unpaired trajectories: {len(est)} vs {len(gt)} samples")


def interval_pairs(t: np.ndarray, interval: float) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i, j) with t_j nearest to t_i + interval within half a sample period."""
    if interval <= 0.0:
        raise InvalidArgumentError("interval must be positive")
    n = len(t)
    if n < 2:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    half = 0.5 * float(np.median(np.diff(t)))
    target = t + interval
    right = np.clip(np.searchsorted(t, target), 0, n - 1)
    left = np.clip(right - 1, 0, n - 1)
    j = np.where(np.abs(t[left] - target) <= np.abs(t[right] - target), left, right)
    i = np.arange(n)
    ok = (np.abs(t[j] - target) <= half + TIME_TOL) & (j > i)
    return i[ok], j[ok]


def relative_rotation_errors(est: Trajectory, gt: Trajectory, interval: float) -> np.ndarray:
    _check_paired(est, gt)
    i, j = interval_pairs(gt.t, interval)
    rel_est = quat_mul(quat_conj(est.q[i]), est.q[j])
    rel_gt = quat_mul(quat_conj(gt.q[i]), gt.q[j])
    err = quat_log(quat_mul(quat_conj(rel_gt), rel_est))
    return np.degrees(np.linalg.norm(err, axis=-1))


def relative_position_errors(est: Trajectory, gt: Trajectory, interval: float) -> np.ndarray:
    _check_paired(est, gt)
    i, j = interval_pairs(gt.t, interval)
    # R̂_i R_i^T applied to the estimated displacement
    align = quat_mul(gt.q[i], quat_conj(est.q[i]))
    moved = quat_rotate(align, est.p[j] - est.p[i])
    return np.linalg.norm(gt.p[j] - gt.p[i] - moved, axis=-1)


def _mean(errors: np.ndarray) -> float:
    return float(np.mean(errors)) if errors.size else float("nan")


def _rms(errors: np.ndarray) -> float:
    return float(np.sqrt(np.mean(errors**2))) if errors.size else float("nan")


def roe(est: Trajectory, gt: Trajectory, interval: float) -> float:
    return _mean(relative_rotation_errors(est, gt, interval))


def r_rmse(est: Trajectory, gt: Trajectory, interval: float) -> float:
    return _rms(relative_rotation_errors(est, gt, interval))


def rpe(est: Trajectory, gt: Trajectory, interval: float) -> float:
    return _mean(relative_position_errors(est, gt, interval))


def p_rmse(est: Trajectory, gt: Trajectory, interval: float) -> float:
    return _rms(relative_position_errors(est, gt, interval))


def position_errors(est: Trajectory, gt: Trajectory) -> np.ndarray:
    _check_paired(est, gt)
    return np.linalg.norm(est.p - gt.p, axis=-1)


def ate(est: Trajectory, gt: Trajectory) -> float:
    return _mean(position_errors(est, gt))


def velocity_errors(est: Trajectory, gt: Trajectory) -> np.ndarray:
    _check_paired(est, gt)
    return np.linalg.norm(est.v - gt.v, axis=-1)


def drift(est: Trajectory, gt: Trajectory) -> float:
    errors = position_errors(est, gt)
    return float(errors[-1]) if errors.size else float("nan")


def _result(errors: np.ndarray, value: float, interval: float | None) -> MetricResult:
    return MetricResult(value, _mean(errors), _rms(errors), int(errors.size), interval)


def compute_metric(name: str, est: Trajectory, gt: Trajectory, interval: float) -> MetricResult:
    if name in ("roe", "rrmse"):
        errors = relative_rotation_errors(est, gt, interval)
        return _result(errors, _mean(errors) if name == "roe" else _rms(errors), interval)
    if name in ("rpe", "prmse"):
        errors = relative_position_errors(est, gt, interval)
        return _result(errors, _mean(errors) if name == "rpe" else _rms(errors), interval)
    if name == "ate":
        errors = position_errors(est, gt)
        return _result(errors, _mean(errors), None)
    if name == "vel":
        errors = velocity_errors(est, gt)
        return _result(errors, _mean(errors), None)
    if name == "drift":
        errors = position_errors(est, gt)
        last = errors[-1:] if errors.size else errors
        return _result(last, drift(est, gt), None)
    raise InvalidArgumentError(f"unknown metric {name!r}; choose from {', '.join(METRIC_NAMES)}")


def evaluate(
    est: Trajectory,
    gt: Trajectory,
    metrics: Sequence[str],
    intervals: Sequence[float] = (1.0,),
    masks: Iterable[Sequence[float]] | None = None,
) -> dict:
    """Metrics report keyed by metric name.

    With one interval every entry is {mean, rmse, count, interval_s, value}; with several the
    relative metrics hold one such entry per interval, keyed by the interval in seconds.
    """
    paired_est, paired_gt = time_align(est, gt, masks)
    if len(paired_est) == 0:
        raise InvalidArgumentError("no estimate overlaps the ground truth")
    report: dict = {}
    for name in metrics:
        if name in ("ate", "vel", "drift") or len(intervals) == 1:
            report[name] = asdict(compute_metric(name, paired_est, paired_gt, intervals[0]))
        else:
            report[name] = {
                f"{dt:g}": asdict(compute_metric(name, paired_est, paired_gt, dt)) for dt in intervals
            }
    return report
