"""IMU sample containers, preintegrated increments and state prediction.

Increments follow the right-multiplied convention

    dR[k+1] = dR[k] ⊗ exp(w_k dt_k)
    dv[k+1] = dv[k] + dR[k] a_k dt_k
    dp[k+1] = dp[k] + dv[k] dt_k + 1/2 dR[k] a_k dt_k^2

and carry no gravity; gravity enters only in `predict_state`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from imu_preint.errors import InvalidArgumentError
from imu_preint.lie_so3 import (
    IDENTITY_QUAT,
    Rotation,
    Vec3,
    quat_conj,
    quat_exp,
    quat_log,
    quat_mul,
    quat_normalize,
    quat_rotate,
)
from imu_preint.scan import cumprod_so3, cumsum_vec3
from imu_preint.utils import as_vec3

logger = logging.getLogger(__name__)

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])


def gravity_vector(magnitude: float = 9.81) -> np.ndarray:
    """World z-up gravity with the given magnitude."""
    return np.array([0.0, 0.0, -float(magnitude)])


@dataclass(frozen=True)
class ImuSample:
    t: float
    w: np.ndarray
    a: np.ndarray


@dataclass(frozen=True, eq=False)
class ImuSequence:
    """Timestamped body-frame gyroscope (rad/s) and accelerometer (m/s^2) readings.

    `dt` is optional. When omitted, sample k spans t[k+1] - t[k] and the last sample
    repeats its predecessor's spacing. Masked or windowed streams carry explicit `dt`
    so no sample spans a gap.
    """

    t: np.ndarray
    w: np.ndarray
    a: np.ndarray
    dt: np.ndarray | None = None
    t0_ns: int = 0

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float).reshape(-1)
        w = np.asarray(self.w, dtype=float).reshape(-1, 3)
        a = np.asarray(self.a, dtype=float).reshape(-1, 3)
        if not (len(t) == len(w) == len(a)):
            raise InvalidArgumentError(
                f"length mismatch: t={len(t)}, w={len(w)}, a={len(a)}"
            )
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w)) and np.all(np.isfinite(a))):
            raise InvalidArgumentError("IMU readings and timestamps must be finite")
        if len(t) > 1 and np.any(np.diff(t) <= 0.0):
            bad = int(np.argmax(np.diff(t) <= 0.0)) + 1
            raise InvalidArgumentError(f"timestamps not strictly increasing at sample {bad}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "a", a)
        if self.dt is not None:
            dt = np.asarray(self.dt, dtype=float).reshape(-1)
            if len(dt) != len(t):
                raise InvalidArgumentError(f"dt length {len(dt)} != sample count {len(t)}")
            if np.any(dt < 0.0) or not np.all(np.isfinite(dt)):
                raise InvalidArgumentError("dt must be finite and nonnegative")
            object.__setattr__(self, "dt", dt)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, k: int) -> ImuSample:
        return ImuSample(float(self.t[k]), self.w[k].copy(), self.a[k].copy())

    @classmethod
    def from_samples(cls, samples: list[ImuSample]) -> "ImuSequence":
        if not samples:
            return cls(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)))
        return cls(
            np.array([s.t for s in samples]),
            np.array([s.w for s in samples]),
            np.array([s.a for s in samples]),
        )

    def dts(self) -> np.ndarray:
        """Per-sample integration step."""
        if self.dt is not None:
            return self.dt
        n = len(self.t)
        if n == 0:
            return np.zeros(0)
        if n == 1:
            logger.warning("single-sample stream without explicit dt; using dt = 0")
            return np.zeros(1)
        d = np.diff(self.t)
        return np.append(d, d[-1])

    def end_time(self) -> float:
        """Time at which the last sample's interval closes."""
        return float(self.t[-1] + self.dts()[-1])

    def with_readings(self, w: np.ndarray, a: np.ndarray) -> "ImuSequence":
        return replace(self, w=w, a=a)

    def subset(self, index) -> "ImuSequence":
        """Samples selected by `index`, each keeping its own dt."""
        return ImuSequence(
            self.t[index], self.w[index], self.a[index], dt=self.dts()[index], t0_ns=self.t0_ns
        )

    def window_indices(self, t0: float, t1: float, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Indices of samples overlapping [t0, t1) and their clipped start times and steps."""
        starts = self.t
        ends = self.t + self.dts()
        idx = np.flatnonzero((ends > t0 + tol) & (starts < t1 - tol))
        if idx.size == 0:
            raise InvalidArgumentError(f"no IMU samples in window [{t0}, {t1})")
        clipped_start = np.maximum(starts[idx], t0)
        clipped_end = np.minimum(ends[idx], t1)
        return idx, clipped_start, clipped_end - clipped_start

    def window(self, t0: float, t1: float, tol: float = 1e-9) -> "ImuSequence":
        """Samples covering [t0, t1) with first and last intervals clipped to the window."""
        idx, start, dt = self.window_indices(t0, t1, tol)
        return ImuSequence(start, self.w[idx], self.a[idx], dt=dt, t0_ns=self.t0_ns)


@dataclass(frozen=True, eq=False)
class Increments:
    """Preintegrated (dR, dv, dp, dt) relative to a window start."""

    dR: Rotation = field(default_factory=Rotation.identity)
    dv: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dp: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dt: float = 0.0

    def __post_init__(self) -> None:
        if self.dt < 0.0:
            raise InvalidArgumentError("increment dt must be nonnegative")
        object.__setattr__(self, "dv", as_vec3(self.dv, "dv"))
        object.__setattr__(self, "dp", as_vec3(self.dp, "dp"))

    @classmethod
    def identity(cls) -> "Increments":
        return cls()


@dataclass(frozen=True, eq=False)
class IncrementSeries:
    """All N prefix increments of a stream; entry k spans samples 0..k."""

    q: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    dt: np.ndarray

    def __len__(self) -> int:
        return len(self.dt)

    def __getitem__(self, k: int) -> Increments:
        return Increments(Rotation(self.q[k]), self.dv[k].copy(), self.dp[k].copy(), float(self.dt[k]))

    def last(self) -> Increments:
        return self[len(self) - 1]


@dataclass(frozen=True, eq=False)
class NavState:
    """World-frame rotation, velocity (m/s), position (m) at time t (s)."""

    r: Rotation = field(default_factory=Rotation.identity)
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "v", as_vec3(self.v, "velocity"))
        object.__setattr__(self, "p", as_vec3(self.p, "position"))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A NavState sequence stored as arrays: t (N,), q (N, 4), v (N, 3), p (N, 3)."""

    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float).reshape(-1)
        n = len(t)
        q = np.asarray(self.q, dtype=float).reshape(n, 4)
        v = np.asarray(self.v, dtype=float).reshape(n, 3)
        p = np.asarray(self.p, dtype=float).reshape(n, 3)
        if n and not (np.all(np.isfinite(v)) and np.all(np.isfinite(p))):
            raise InvalidArgumentError("trajectory values must be finite")
        if n > 1 and np.any(np.diff(t) <= 0.0):
            raise InvalidArgumentError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", quat_normalize(q) if n else q)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "p", p)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, k: int) -> NavState:
        return NavState(Rotation(self.q[k]), self.v[k].copy(), self.p[k].copy(), float(self.t[k]))

    @classmethod
    def from_states(cls, states: list[NavState]) -> "Trajectory":
        if not states:
            return cls(np.zeros(0), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros((0, 3)))
        return cls(
            np.array([s.t for s in states]),
            np.array([s.r.q for s in states]),
            np.array([s.v for s in states]),
            np.array([s.p for s in states]),
        )

    def subset(self, index) -> "Trajectory":
        return Trajectory(self.t[index], self.q[index], self.v[index], self.p[index])


def before_rotations(q_after: np.ndarray) -> np.ndarray:
    """Shift prefix rotations so entry k is the rotation before sample k."""
    first = np.broadcast_to(IDENTITY_QUAT, q_after[:1].shape)
    return np.concatenate([first, q_after[:-1]], axis=0)


def integrate_arrays(w: np.ndarray, a: np.ndarray, dt: np.ndarray):
    """Prefix (q, dv, dp) for readings of shape (N, ..., 3) and steps of shape (N,).

    Axes between the first and the last are independent batches integrated together.
    """
    h = np.asarray(dt, dtype=float).reshape((-1,) + (1,) * (np.ndim(w) - 1))
    q_after = cumprod_so3(quat_exp(w * h))
    acc = quat_rotate(before_rotations(q_after), a)
    dv = cumsum_vec3(acc * h)
    dv_before = np.concatenate([np.zeros_like(dv[:1]), dv[:-1]], axis=0)
    dp = cumsum_vec3(dv_before * h + 0.5 * acc * h**2)
    return q_after, dv, dp


def integrate_increments(samples: ImuSequence) -> IncrementSeries:
    """Every prefix increment of `samples`, computed with log-depth scans."""
    if len(samples) == 0:
        raise InvalidArgumentError("cannot integrate an empty IMU sequence")
    dt = samples.dts()
    q, dv, dp = integrate_arrays(samples.w, samples.a, dt)
    total = cumsum_vec3(dt[:, None])[:, 0]
    return IncrementSeries(q, dv, dp, total)


def integrate_increments_iterative(samples: ImuSequence) -> IncrementSeries:
    """Per-frame loop producing the same series as `integrate_increments`."""
    if len(samples) == 0:
        raise InvalidArgumentError("cannot integrate an empty IMU sequence")
    dt = samples.dts()
    n = len(samples)
    qs = np.empty((n, 4))
    dvs = np.empty((n, 3))
    dps = np.empty((n, 3))
    ts = np.empty(n)
    r = Rotation.identity()
    v = np.zeros(3)
    p = np.zeros(3)
    elapsed = 0.0
    for k in range(n):
        h = dt[k]
        acc = r.rotate(samples.a[k])
        p = p + v * h + 0.5 * acc * h * h
        v = v + acc * h
        r = r.compose(Rotation.exp(samples.w[k] * h))
        elapsed += h
        qs[k], dvs[k], dps[k], ts[k] = r.q, v, p, elapsed
    return IncrementSeries(qs, dvs, dps, ts)


def predict_state(x_i: NavState, inc: Increments, gravity: Vec3 = DEFAULT_GRAVITY) -> NavState:
    g = as_vec3(gravity, "gravity")
    dt = inc.dt
    return NavState(
        r=x_i.r.compose(inc.dR),
        v=x_i.v + g * dt + x_i.r.rotate(inc.dv),
        p=x_i.p + x_i.v * dt + 0.5 * g * dt * dt + x_i.r.rotate(inc.dp),
        t=x_i.t + dt,
    )


def predict_states(x0: NavState, series: IncrementSeries, gravity: Vec3 = DEFAULT_GRAVITY):
    """States predicted from `x0` by every prefix increment, as (t, q, v, p) arrays."""
    g = as_vec3(gravity, "gravity")
    dt = series.dt[:, None]
    q0 = np.broadcast_to(x0.r.q, series.q.shape)
    q = quat_mul(q0, series.q)
    v = x0.v + g * dt + quat_rotate(q0, series.dv)
    p = x0.p + x0.v * dt + 0.5 * g * dt**2 + quat_rotate(q0, series.dp)
    return x0.t + series.dt, q, v, p


def compose_increments(a: Increments, b: Increments) -> Increments:
    """Increment over a followed by b."""
    return Increments(
        dR=a.dR.compose(b.dR),
        dv=a.dv + a.dR.rotate(b.dv),
        dp=a.dp + a.dv * b.dt + a.dR.rotate(b.dp),
        dt=a.dt + b.dt,
    )


def increments_between(x_i: NavState, x_j: NavState, gravity: Vec3 = DEFAULT_GRAVITY) -> Increments:
    """The unique increment with predict_state(x_i, inc, g) == x_j."""
    g = as_vec3(gravity, "gravity")
    dt = x_j.t - x_i.t
    if dt < 0.0:
        raise InvalidArgumentError("x_j precedes x_i")
    r_inv = x_i.r.inverse()
    return Increments(
        dR=Rotation(quat_normalize(quat_mul(quat_conj(x_i.r.q), x_j.r.q))),
        dv=r_inv.rotate(x_j.v - x_i.v - g * dt),
        dp=r_inv.rotate(x_j.p - x_i.p - x_i.v * dt - 0.5 * g * dt * dt),
        dt=dt,
    )


def rotation_error(a: Rotation, b: Rotation) -> np.ndarray:
    """log(a^T b)."""
    return quat_log(quat_mul(quat_conj(a.q), b.q))
