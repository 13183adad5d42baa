"""Preintegration covariance in error order [dphi, dv, dp].

Per frame k the covariance follows

    S[k+1] = A_k S[k] A_k^T + B_g diag(eta_gyro) B_g^T + B_a diag(eta_acc) B_a^T

`propagate_iterative` runs that recursion frame by frame. `propagate_batched` treats each
frame as an affine map S -> A S A^T + Q and scans the composed maps
(A2, Q2) o (A1, Q1) = (A2 A1, A2 Q1 A2^T + Q2), which yields every prefix covariance in
log depth without inverting any A. `window_covariance` evaluates the final covariance of a
window as sum_m C^A[m] C^B[m] C^A[m]^T, with C^A the suffix products of the A_k and
C^B = [S0, Q_0, ..., Q_{N-1}].

Noise values eta are per-frame variances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from imu_preint.errors import InvalidArgumentError, NumericDomainError
from imu_preint.lie_so3 import Rotation, hat, quat_exp, quat_to_matrix, right_jacobian
from imu_preint.preintegration import ImuSequence, IncrementSeries, before_rotations
from imu_preint.scan import cummatmul9, inclusive_scan
from imu_preint.utils import as_vec3

logger = logging.getLogger(__name__)

DIM = 9
SYMMETRY_TOL = 1e-9
PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class StateCov:
    m: np.ndarray = field(default_factory=lambda: np.zeros((DIM, DIM)))

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=float)
        if m.shape != (DIM, DIM):
            raise InvalidArgumentError(f"state covariance must be 9x9, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidArgumentError("state covariance must be finite")
        object.__setattr__(self, "m", m)

    @classmethod
    def zeros(cls) -> "StateCov":
        return cls()

    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return cov_blocks(self)

    def check(self) -> None:
        """Raise NumericDomainError unless symmetric and positive semidefinite."""
        m = self.m
        scale = max(np.abs(m).max(), 1e-300)
        if np.abs(m - m.T).max() > SYMMETRY_TOL * scale:
            raise NumericDomainError("covariance is not symmetric")
        trace = float(np.trace(m))
        if np.linalg.eigvalsh(m).min() < -PSD_TOL * max(trace, 0.0):
            raise NumericDomainError("covariance is not positive semidefinite")


@dataclass(frozen=True, eq=False)
class NoiseDiag:
    """Per-axis noise variances for one frame: (rad/s)^2 and (m/s^2)^2."""

    eta_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    eta_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        eg = as_vec3(self.eta_gyro, "eta_gyro")
        ea = as_vec3(self.eta_acc, "eta_acc")
        if np.any(eg < 0.0) or np.any(ea < 0.0):
            raise InvalidArgumentError("noise variances must be nonnegative")
        object.__setattr__(self, "eta_gyro", eg)
        object.__setattr__(self, "eta_acc", ea)

    @classmethod
    def from_std(cls, gyro_std, acc_std) -> "NoiseDiag":
        """From per-frame standard deviations (squared on ingestion)."""
        return cls(as_vec3(gyro_std, "gyro_std") ** 2, as_vec3(acc_std, "acc_std") ** 2)

    @classmethod
    def from_density(cls, gyro_density, acc_density, dt: float) -> "NoiseDiag":
        """From continuous noise densities (units/sqrt(Hz)) sampled every dt seconds."""
        if dt <= 0.0:
            raise InvalidArgumentError("dt must be positive")
        return cls(
            as_vec3(gyro_density, "gyro_density") ** 2 / dt,
            as_vec3(acc_density, "acc_density") ** 2 / dt,
        )


@dataclass(frozen=True, eq=False)
class NoiseSeries:
    """Per-frame noise variances, shape (N, 3) each."""

    eta_gyro: np.ndarray
    eta_acc: np.ndarray

    def __post_init__(self) -> None:
        eg = np.asarray(self.eta_gyro, dtype=float).reshape(-1, 3)
        ea = np.asarray(self.eta_acc, dtype=float).reshape(-1, 3)
        if len(eg) != len(ea):
            raise InvalidArgumentError("gyro and accelerometer noise lengths differ")
        if np.any(eg < 0.0) or np.any(ea < 0.0) or not (np.all(np.isfinite(eg)) and np.all(np.isfinite(ea))):
            raise InvalidArgumentError("noise variances must be finite and nonnegative")
        object.__setattr__(self, "eta_gyro", eg)
        object.__setattr__(self, "eta_acc", ea)

    @classmethod
    def constant(cls, noise: NoiseDiag, n: int) -> "NoiseSeries":
        return cls(np.tile(noise.eta_gyro, (n, 1)), np.tile(noise.eta_acc, (n, 1)))

    def __len__(self) -> int:
        return len(self.eta_gyro)

    def __getitem__(self, k: int) -> NoiseDiag:
        return NoiseDiag(self.eta_gyro[k], self.eta_acc[k])

    def scaled(self, c: float) -> "NoiseSeries":
        return NoiseSeries(self.eta_gyro * c, self.eta_acc * c)

    def subset(self, index) -> "NoiseSeries":
        return NoiseSeries(self.eta_gyro[index], self.eta_acc[index])


@dataclass(frozen=True, eq=False)
class CovarianceSeries:
    """Prefix covariances; entry k is the covariance of increment k."""

    m: np.ndarray

    def __len__(self) -> int:
        return len(self.m)

    def __getitem__(self, k: int) -> StateCov:
        return StateCov(self.m[k])

    def last(self) -> StateCov:
        return self[len(self) - 1]


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def build_A_batch(q_ik, q_step, a, dt) -> np.ndarray:
    q_ik = np.asarray(q_ik, dtype=float)
    dt = np.asarray(dt, dtype=float)[..., None, None]
    r = quat_to_matrix(q_ik)
    r_step = quat_to_matrix(q_step)
    rh = r @ hat(a)
    A = np.broadcast_to(np.eye(DIM), q_ik.shape[:-1] + (DIM, DIM)).copy()
    A[..., 0:3, 0:3] = np.swapaxes(r_step, -1, -2)
    A[..., 3:6, 0:3] = -rh * dt
    A[..., 6:9, 0:3] = -0.5 * rh * dt**2
    A[..., 6:9, 3:6] = np.eye(3) * dt
    return A


def build_B_batch(q_ik, w, dt) -> tuple[np.ndarray, np.ndarray]:
    q_ik = np.asarray(q_ik, dtype=float)
    w = np.asarray(w, dtype=float)
    dt_s = np.asarray(dt, dtype=float)
    dt = dt_s[..., None, None]
    lead = q_ik.shape[:-1]
    r = quat_to_matrix(q_ik)
    B_g = np.zeros(lead + (DIM, 3))
    B_a = np.zeros(lead + (DIM, 3))
    B_g[..., 0:3, :] = right_jacobian(w * dt_s[..., None]) * dt
    B_a[..., 3:6, :] = r * dt
    B_a[..., 6:9, :] = 0.5 * r * dt**2
    return B_g, B_a


def build_A(dR_ik: Rotation, dR_step: Rotation, a_k, dt: float) -> np.ndarray:
    """State transition of one frame (9x9)."""
    return build_A_batch(dR_ik.q, dR_step.q, as_vec3(a_k, "a_k"), dt)


def build_B(dR_ik: Rotation, w_k, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Noise input matrices (B_g, B_a), each 9x3."""
    return build_B_batch(dR_ik.q, as_vec3(w_k, "w_k"), dt)


def noise_terms(B_g: np.ndarray, B_a: np.ndarray, eta_gyro, eta_acc) -> np.ndarray:
    """B_g diag(eta_gyro) B_g^T + B_a diag(eta_acc) B_a^T, batched."""
    eg = np.asarray(eta_gyro, dtype=float)[..., None, :]
    ea = np.asarray(eta_acc, dtype=float)[..., None, :]
    return (B_g * eg) @ np.swapaxes(B_g, -1, -2) + (B_a * ea) @ np.swapaxes(B_a, -1, -2)


def step_covariance(sigma: StateCov, A, B_g, B_a, eta: NoiseDiag) -> StateCov:
    if np.any(eta.eta_gyro < 0.0) or np.any(eta.eta_acc < 0.0):
        raise InvalidArgumentError("noise variances must be nonnegative")
    m = A @ sigma.m @ A.T + noise_terms(B_g, B_a, eta.eta_gyro, eta.eta_acc)
    return StateCov(_symmetrize(m))


def _check_lengths(increments: IncrementSeries, samples: ImuSequence, eta: NoiseSeries) -> None:
    if not (len(increments) == len(samples) == len(eta)):
        raise InvalidArgumentError(
            f"length mismatch: increments={len(increments)}, samples={len(samples)}, noise={len(eta)}"
        )
    if len(samples) == 0:
        raise InvalidArgumentError("cannot propagate covariance over an empty stream")


def _sigma0(sigma0: StateCov | None) -> np.ndarray:
    return np.zeros((DIM, DIM)) if sigma0 is None else sigma0.m


def transitions(increments: IncrementSeries, samples: ImuSequence, eta: NoiseSeries):
    """Per-frame (A_k, Q_k) with Q_k the frame's noise contribution."""
    _check_lengths(increments, samples, eta)
    dt = samples.dts()
    q_ik = before_rotations(increments.q)
    q_step = quat_exp(samples.w * dt[:, None])
    A = build_A_batch(q_ik, q_step, samples.a, dt)
    B_g, B_a = build_B_batch(q_ik, samples.w, dt)
    return A, _symmetrize(noise_terms(B_g, B_a, eta.eta_gyro, eta.eta_acc))


def propagate_iterative(
    increments: IncrementSeries,
    samples: ImuSequence,
    eta: NoiseSeries,
    sigma0: StateCov | None = None,
) -> CovarianceSeries:
    """Frame-by-frame recursion."""
    _check_lengths(increments, samples, eta)
    dt = samples.dts()
    q_ik = before_rotations(increments.q)
    sigma = StateCov(_sigma0(sigma0))
    out = np.empty((len(samples), DIM, DIM))
    for k in range(len(samples)):
        dR_ik = Rotation(q_ik[k])
        A = build_A(dR_ik, Rotation.exp(samples.w[k] * dt[k]), samples.a[k], dt[k])
        B_g, B_a = build_B(dR_ik, samples.w[k], dt[k])
        sigma = step_covariance(sigma, A, B_g, B_a, eta[k])
        out[k] = sigma.m
    return CovarianceSeries(out)


def _affine_compose(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    A1, Q1 = first[:, 0], first[:, 1]
    A2, Q2 = second[:, 0], second[:, 1]
    A = A2 @ A1
    Q = A2 @ Q1 @ np.swapaxes(A2, -1, -2) + Q2
    return np.stack([A, Q], axis=1)


def propagate_batched(
    increments: IncrementSeries,
    samples: ImuSequence,
    eta: NoiseSeries,
    sigma0: StateCov | None = None,
) -> CovarianceSeries:
    """Every prefix covariance from a log-depth scan over per-frame affine maps.

    Composing (A_k, Q_k) pairs yields, at the last prefix, the same sum of
    C^A[m] C^B[m] C^A[m]^T that `window_covariance` forms from suffix products.
    """
    A, Q = transitions(increments, samples, eta)
    scanned = inclusive_scan(_affine_compose, np.stack([A, Q], axis=1))
    prefix_A, prefix_Q = scanned[:, 0], scanned[:, 1]
    m = prefix_Q
    s0 = _sigma0(sigma0)
    if np.any(s0):
        m = prefix_A @ s0 @ np.swapaxes(prefix_A, -1, -2) + prefix_Q
    return CovarianceSeries(_symmetrize(m))


def window_covariance(A: np.ndarray, Q: np.ndarray, sigma0: StateCov | None = None) -> np.ndarray:
    """Final covariance of a window from the stacked C^A / C^B lists."""
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if len(A) == 0:
        return _sigma0(sigma0).copy()
    suffix = cummatmul9(A, suffix=True)
    c_a = np.concatenate([suffix, np.eye(DIM)[None]], axis=0)
    c_b = np.concatenate([_sigma0(sigma0)[None], Q], axis=0)
    m = np.einsum("kij,kjl,kml->im", c_a, c_b, c_a, optimize=True)
    return _symmetrize(m)


def window_transition(A: np.ndarray) -> np.ndarray:
    """A_{N-1} ... A_0 for one window."""
    if len(A) == 0:
        return np.eye(DIM)
    return cummatmul9(A, suffix=True)[0]


def cov_blocks(sigma: StateCov) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rotation, velocity and position diagonal blocks."""
    m = sigma.m
    return m[0:3, 0:3].copy(), m[3:6, 3:6].copy(), m[6:9, 6:9].copy()
