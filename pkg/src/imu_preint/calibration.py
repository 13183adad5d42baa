"""Constant-bias calibration: fit (b_g, b_a) by minimizing the segment state loss.

Gradients are central finite differences over the six bias parameters. All 13 parameter
vectors a gradient needs are integrated together along a batch axis, and segments are
evaluated on the thread pool. Steps come from Adam; a step that raises the objective is
rejected, the step size decays and the moment estimates restart, so accepted objectives never
increase.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from imu_preint import parallel
from imu_preint.config import CalibrationConfig
from imu_preint.correction import ConstantBias
from imu_preint.dataset_io import Segment
from imu_preint.errors import DivergedError, InvalidArgumentError
from imu_preint.lie_so3 import quat_conj, quat_log, quat_mul, quat_rotate
from imu_preint.losses import huber_array
from imu_preint.preintegration import DEFAULT_GRAVITY, integrate_arrays
from imu_preint.utils import as_vec3

logger = logging.getLogger(__name__)

ADAM_EPS = 1e-8
N_PARAMS = 6


@dataclass
class CalibrationReport:
    iterations: int = 0
    accepted: int = 0
    rejected: int = 0
    loss_trace: list[float] = field(default_factory=list)
    final_loss: float = float("nan")
    final_lr: float = float("nan")
    converged: bool = False
    seed: int = 0


def _segment_losses(segment: Segment, thetas: np.ndarray, cfg: CalibrationConfig, gravity: np.ndarray) -> np.ndarray:
    """State loss of `segment` for every bias vector in `thetas` (P, 6)."""
    imu = segment.imu
    dt = imu.dts()
    w = imu.w[:, None, :] - thetas[None, :, :3]
    a = imu.a[:, None, :] - thetas[None, :, 3:]
    q, dv, dp = integrate_arrays(w, a, dt)
    total = float(dt.sum())

    x0, gt = segment.start, segment.end
    q_pred = quat_mul(np.broadcast_to(x0.r.q, q[-1].shape), q[-1])
    v_pred = x0.v + gravity * total + quat_rotate(x0.r.q, dv[-1])
    p_pred = x0.p + x0.v * total + 0.5 * gravity * total**2 + quat_rotate(x0.r.q, dp[-1])

    e_r = quat_log(quat_mul(np.broadcast_to(quat_conj(gt.r.q), q_pred.shape), q_pred))
    w_r, w_v, w_p = cfg.loss_weights
    delta = cfg.huber_delta
    return (
        w_r * huber_array(np.linalg.norm(e_r, axis=-1), delta)
        + w_v * huber_array(np.linalg.norm(v_pred - gt.v, axis=-1), delta)
        + w_p * huber_array(np.linalg.norm(p_pred - gt.p, axis=-1), delta)
    )


def mean_losses(segments: Sequence[Segment], thetas, cfg: CalibrationConfig, gravity=DEFAULT_GRAVITY) -> np.ndarray:
    """Mean state loss over segments for each row of `thetas`."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    g = as_vec3(gravity, "gravity")
    per_segment = parallel.map_ordered(lambda seg: _segment_losses(seg, thetas, cfg, g), segments)
    return np.mean(per_segment, axis=0)


def _fd_steps(cfg: CalibrationConfig) -> np.ndarray:
    return np.array([cfg.gyro_fd_step] * 3 + [cfg.acc_fd_step] * 3)


def loss_and_gradient(segments: Sequence[Segment], theta, cfg: CalibrationConfig, gravity=DEFAULT_GRAVITY):
    """Mean loss at `theta` and its central finite-difference gradient."""
    theta = np.asarray(theta, dtype=float)
    h = _fd_steps(cfg)
    offsets = np.diag(h)
    thetas = np.vstack([theta, theta + offsets, theta - offsets])
    values = mean_losses(segments, thetas, cfg, gravity)
    grad = (values[1 : 1 + N_PARAMS] - values[1 + N_PARAMS :]) / (2.0 * h)
    return float(values[0]), grad


def fit_constant_bias(
    segments: Sequence[Segment],
    config: CalibrationConfig | None = None,
    *,
    gravity=DEFAULT_GRAVITY,
    seed: int = 0,
    initial: ConstantBias | None = None,
    report: CalibrationReport | None = None,
) -> ConstantBias:
    """Average gyroscope and accelerometer bias over the training segments."""
    if not segments:
        raise InvalidArgumentError("calibration needs at least one training segment")
    cfg = config or CalibrationConfig()
    report = report if report is not None else CalibrationReport()
    report.seed = seed
    # Full-batch gradients: the result depends on segment order only through summation.
    theta = np.zeros(N_PARAMS) if initial is None else initial.as_vector()
    wd = cfg.weight_decay

    def objective(loss: float, params: np.ndarray) -> float:
        return loss + 0.5 * wd * float(params @ params)

    loss, grad = loss_and_gradient(segments, theta, cfg, gravity)
    if not np.isfinite(loss):
        raise DivergedError("non-finite calibration loss at the initial point", ConstantBias.from_vector(theta))
    current = objective(loss, theta)
    report.loss_trace.append(current)

    m = np.zeros(N_PARAMS)
    v = np.zeros(N_PARAMS)
    step = 0
    lr = cfg.lr
    for it in range(cfg.epochs):
        report.iterations = it + 1
        g = grad + wd * theta
        t = step + 1
        m_new = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v_new = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        m_hat = m_new / (1.0 - cfg.beta1**t)
        v_hat = v_new / (1.0 - cfg.beta2**t)
        candidate = theta - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)

        cand_loss, cand_grad = loss_and_gradient(segments, candidate, cfg, gravity)
        if not np.isfinite(cand_loss) or not np.all(np.isfinite(cand_grad)):
            raise DivergedError(
                f"non-finite calibration loss at iteration {it + 1}", ConstantBias.from_vector(theta)
            )
        cand_obj = objective(cand_loss, candidate)
        if cand_obj <= current:
            theta, grad, current = candidate, cand_grad, cand_obj
            m, v, step = m_new, v_new, t
            report.accepted += 1
            report.loss_trace.append(current)
            logger.debug("iter %d accepted: loss %.6e lr %.2e", it + 1, current, lr)
        else:
            report.rejected += 1
            lr *= cfg.lr_decay
            # restart the moments so the retry is a descent direction
            m = np.zeros(N_PARAMS)
            v = np.zeros(N_PARAMS)
            step = 0
            logger.debug("iter %d rejected: loss %.6e > %.6e, lr -> %.2e", it + 1, cand_obj, current, lr)
            if lr < cfg.min_lr:
                report.converged = True
                break

    report.final_loss = current
    report.final_lr = lr
    bias = ConstantBias.from_vector(theta)
    logger.info(
        "calibration finished after %d iterations (%d accepted): loss %.6e, b_g=%s, b_a=%s",
        report.iterations, report.accepted, current, bias.b_g, bias.b_a,
    )
    return bias
