"""State and covariance losses on navigation-state residuals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from imu_preint.errors import NumericDomainError
from imu_preint.preintegration import NavState, rotation_error

DEFAULT_HUBER_DELTA = 0.1
DEFAULT_WEIGHTS = (1.0, 1.0, 1.0)
DEFAULT_EPSILON = 1e-3
REGULARIZATION = 1e-12


@dataclass(frozen=True)
class LossParts:
    r: float = 0.0
    v: float = 0.0
    p: float = 0.0

    def total(self) -> float:
        return self.r + self.v + self.p


def huber(r: float, delta: float = DEFAULT_HUBER_DELTA) -> float:
    r = float(r)
    if r <= delta:
        return 0.5 * r * r
    return delta * (r - 0.5 * delta)


def huber_array(r, delta: float = DEFAULT_HUBER_DELTA) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))


def huber_grad(e, delta: float = DEFAULT_HUBER_DELTA) -> np.ndarray:
    """Gradient of huber(|e|) with respect to the vector e."""
    e = np.asarray(e, dtype=float)
    n = float(np.linalg.norm(e))
    if n <= delta:
        return e.copy()
    return delta * e / n


def residuals(pred: NavState, gt: NavState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rotation (log of R_gt^T R_pred), velocity and position residuals."""
    return rotation_error(gt.r, pred.r), pred.v - gt.v, pred.p - gt.p


def state_loss_parts(
    pred: NavState,
    gt: NavState,
    weights=DEFAULT_WEIGHTS,
    delta: float = DEFAULT_HUBER_DELTA,
) -> LossParts:
    e_r, e_v, e_p = residuals(pred, gt)
    w_r, w_v, w_p = weights
    return LossParts(
        w_r * huber(np.linalg.norm(e_r), delta),
        w_v * huber(np.linalg.norm(e_v), delta),
        w_p * huber(np.linalg.norm(e_p), delta),
    )


def state_loss(pred: NavState, gt: NavState, weights=DEFAULT_WEIGHTS, delta: float = DEFAULT_HUBER_DELTA) -> float:
    return state_loss_parts(pred, gt, weights, delta).total()


def _factor(sigma: np.ndarray):
    reg = np.asarray(sigma, dtype=float) + REGULARIZATION * np.eye(len(sigma))
    try:
        return linalg.cho_factor(reg, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericDomainError("covariance block is not positive definite") from exc


def cov_nll(e, sigma) -> float:
    """1/2 (e^T S^-1 e + ln det S) with S = sigma + 1e-12 I."""
    e = np.asarray(e, dtype=float)
    c = _factor(sigma)
    log_det = 2.0 * np.sum(np.log(np.diag(c[0])))
    return 0.5 * (float(e @ linalg.cho_solve(c, e)) + log_det)


def cov_nll_grad(e, sigma) -> np.ndarray:
    """Gradient of `cov_nll` with respect to e."""
    return linalg.cho_solve(_factor(sigma), np.asarray(e, dtype=float))


def cov_loss_parts(pred: NavState, gt: NavState, blocks) -> LossParts:
    e_r, e_v, e_p = residuals(pred, gt)
    s_r, s_v, s_p = blocks
    return LossParts(cov_nll(e_r, s_r), cov_nll(e_v, s_v), cov_nll(e_p, s_p))


def cov_loss(pred: NavState, gt: NavState, blocks) -> float:
    return cov_loss_parts(pred, gt, blocks).total()


def total_loss(state_parts: LossParts, cov_parts: LossParts, epsilon: float = DEFAULT_EPSILON) -> float:
    return state_parts.total() + epsilon * cov_parts.total()
