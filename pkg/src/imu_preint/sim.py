"""Synthetic trajectories, IMU synthesis with noise and bias, and simulated GPS."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from imu_preint.errors import InvalidArgumentError
from imu_preint.lie_so3 import quat_conj, quat_log, quat_mul, quat_normalize, quat_rotate
from imu_preint.preintegration import DEFAULT_GRAVITY, ImuSequence, Trajectory
from imu_preint.utils import as_vec3

logger = logging.getLogger(__name__)

TRAJECTORY_KINDS = ("rest", "line", "circle", "figure8")


@dataclass(frozen=True)
class TrajectoryParams:
    """Shape parameters; each trajectory kind reads the fields it needs."""

    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 10.0
    omega: float = 0.5
    speed: float = 2.0
    heading: float = 0.0
    amplitude: tuple[float, float] = (10.0, 5.0)
    height_amplitude: float = 0.0


@dataclass(frozen=True, eq=False)
class ImuNoise:
    """Per-frame standard deviations (rad/s, m/s^2), scalar or per axis."""

    gyro_std: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acc_std: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "gyro_std", as_vec3(self.gyro_std, "gyro_std"))
        object.__setattr__(self, "acc_std", as_vec3(self.acc_std, "acc_std"))
        if np.any(self.gyro_std < 0.0) or np.any(self.acc_std < 0.0):
            raise InvalidArgumentError("noise standard deviations must be nonnegative")


@dataclass(frozen=True, eq=False)
class ImuBias:
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "b_g", as_vec3(self.b_g, "b_g"))
        object.__setattr__(self, "b_a", as_vec3(self.b_a, "b_a"))


@dataclass(frozen=True, eq=False)
class GpsStream:
    """Position fixes p (N, 3) at times t (N,) with per-fix std sigma (N,)."""

    t: np.ndarray
    p: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(len(t), 3)
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), t.shape).copy()
        if np.any(sigma < 0.0):
            raise InvalidArgumentError("GPS sigma must be nonnegative")
        if len(t) > 1 and np.any(np.diff(t) <= 0.0):
            raise InvalidArgumentError("GPS timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "sigma", sigma)

    def __len__(self) -> int:
        return len(self.t)


def _yaw_quats(yaw: np.ndarray) -> np.ndarray:
    half = 0.5 * yaw
    zeros = np.zeros_like(yaw)
    return quat_normalize(np.stack([np.cos(half), zeros, zeros, np.sin(half)], axis=-1))


def sample_times(duration: float, rate: float) -> np.ndarray:
    if duration <= 0.0 or rate <= 0.0:
        raise InvalidArgumentError("duration and rate must be positive")
    n = int(round(duration * rate)) + 1
    return np.arange(n) / rate


def gen_trajectory(
    kind: str,
    params: TrajectoryParams | None = None,
    duration: float = 10.0,
    rate: float = 200.0,
) -> Trajectory:
    """Analytic poses and velocities; the body x-axis follows the direction of travel."""
    params = params or TrajectoryParams()
    t = sample_times(duration, rate)
    center = np.asarray(params.center, dtype=float)
    n = len(t)

    if kind == "rest":
        p = np.tile(center, (n, 1))
        v = np.zeros((n, 3))
        yaw = np.full(n, params.heading)
    elif kind == "line":
        direction = np.array([np.cos(params.heading), np.sin(params.heading), 0.0])
        v = np.tile(params.speed * direction, (n, 1))
        p = center + t[:, None] * v
        yaw = np.full(n, params.heading)
    elif kind == "circle":
        r, w = params.radius, params.omega
        phase = w * t
        p = center + np.stack([r * np.cos(phase), r * np.sin(phase), np.zeros(n)], axis=-1)
        v = np.stack([-r * w * np.sin(phase), r * w * np.cos(phase), np.zeros(n)], axis=-1)
        yaw = phase + np.sign(w or 1.0) * 0.5 * np.pi
    elif kind == "figure8":
        ax, ay = params.amplitude
        w = params.omega
        h = params.height_amplitude
        phase = w * t
        p = center + np.stack(
            [ax * np.sin(phase), ay * np.sin(2.0 * phase), h * np.sin(phase)], axis=-1
        )
        v = np.stack(
            [ax * w * np.cos(phase), 2.0 * ay * w * np.cos(2.0 * phase), h * w * np.cos(phase)],
            axis=-1,
        )
        yaw = np.unwrap(np.arctan2(v[:, 1], v[:, 0]))
    else:
        raise InvalidArgumentError(
            f"unknown trajectory kind {kind!r}; choose from {', '.join(TRAJECTORY_KINDS)}"
        )
    return Trajectory(t, _yaw_quats(yaw), v, p)


def sample_imu(
    traj: Trajectory,
    gravity=DEFAULT_GRAVITY,
    noise: ImuNoise | None = None,
    bias: ImuBias | None = None,
    seed: int = 0,
    accel_diff: str = "forward",
) -> ImuSequence:
    """IMU readings that reproduce `traj` under the preintegration recursion.

    Body rates come from consecutive pose differences. The specific force defaults to forward
    differences (v[k+1] - v[k]) / dt, not central ones, because only forward differences make
    integrated velocities match the trajectory at every sample. `accel_diff="central"` gives
    np.gradient differences, which leave an offset of up to one step of acceleration in the
    re-integrated velocity. The last sample repeats its predecessor's derivatives.
    """
    n = len(traj)
    if n < 3:
        raise InvalidArgumentError("IMU synthesis needs at least 3 trajectory samples")
    g = as_vec3(gravity, "gravity")
    noise = noise or ImuNoise()
    bias = bias or ImuBias()

    dt = np.diff(traj.t)
    rel = quat_mul(quat_conj(traj.q[:-1]), traj.q[1:])
    w = quat_log(rel) / dt[:, None]
    w = np.vstack([w, w[-1:]])

    if accel_diff == "forward":
        vdot = np.diff(traj.v, axis=0) / dt[:, None]
        vdot = np.vstack([vdot, vdot[-1:]])
    elif accel_diff == "central":
        vdot = np.gradient(traj.v, traj.t, axis=0)
    else:
        raise InvalidArgumentError("accel_diff must be 'forward' or 'central'")
    a = quat_rotate(quat_conj(traj.q), vdot - g)

    rng = np.random.default_rng(seed)
    n_g = rng.normal(0.0, 1.0, (n, 3)) * noise.gyro_std
    n_a = rng.normal(0.0, 1.0, (n, 3)) * noise.acc_std
    return ImuSequence(traj.t.copy(), w + bias.b_g + n_g, a + bias.b_a + n_a)


def simulate_gps(traj: Trajectory, rate: float = 1.0, sigma: float = 0.1, seed: int = 0) -> GpsStream:
    """Noisy position fixes every 1/rate seconds over the trajectory span."""
    if rate <= 0.0:
        raise InvalidArgumentError("GPS rate must be positive")
    if sigma < 0.0:
        raise InvalidArgumentError("GPS sigma must be nonnegative")
    if len(traj) < 2:
        raise InvalidArgumentError("GPS simulation needs at least 2 trajectory samples")
    span = traj.t[-1] - traj.t[0]
    count = int(np.floor(span * rate + 1e-9)) + 1
    times = traj.t[0] + np.arange(count) / rate
    p = np.stack([np.interp(times, traj.t, traj.p[:, axis]) for axis in range(3)], axis=-1)
    rng = np.random.default_rng(seed)
    p = p + rng.normal(0.0, sigma, p.shape)
    logger.debug("simulated %d GPS fixes at %.3g Hz", count, rate)
    return GpsStream(times, p, np.full(count, sigma))
