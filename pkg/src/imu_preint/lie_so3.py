"""SO(3) rotations stored as unit quaternions (w, x, y, z).

Array-level functions (`quat_*`, `hat`, `right_jacobian`) broadcast over leading axes and
are what the scan, preintegration and covariance code run on. The `Rotation` value type and
the module-level `exp`/`log`/`compose`/`rotate`/`inverse` wrap them for single rotations.

Quaternions are kept canonical (w >= 0) and renormalized after every construction and product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from imu_preint.errors import InvalidArgumentError

Vec3 = np.ndarray
Mat3 = np.ndarray

EXP_LOG_TAYLOR = 1e-8
JACOBIAN_TAYLOR = 1e-6

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def _check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")


def quat_normalize(q) -> np.ndarray:
    """Unit-normalize and flip to the w >= 0 hemisphere."""
    q = np.asarray(q, dtype=float)
    _check_finite(q, "quaternion")
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise InvalidArgumentError("zero quaternion")
    q = q / norm
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product a ⊗ b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return quat_normalize(out)


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_exp(phi) -> np.ndarray:
    """Rotation vector(s) to quaternion(s)."""
    phi = np.asarray(phi, dtype=float)
    _check_finite(phi, "rotation vector")
    theta = np.linalg.norm(phi, axis=-1, keepdims=True)
    small = theta < EXP_LOG_TAYLOR
    safe = np.where(small, 1.0, theta)
    w = np.where(small, 1.0 - theta**2 / 8.0, np.cos(0.5 * theta))
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(0.5 * safe) / safe)
    return quat_normalize(np.concatenate([w, k * phi], axis=-1))


def quat_log(q) -> np.ndarray:
    """Quaternion(s) to rotation vector(s) with norm in [0, pi]."""
    q = quat_normalize(q)
    w = q[..., :1]
    xyz = q[..., 1:]
    n = np.linalg.norm(xyz, axis=-1, keepdims=True)
    small = n < EXP_LOG_TAYLOR
    safe_n = np.where(small, 1.0, n)
    safe_w = np.where(small, w, 1.0)
    scale = np.where(
        small,
        2.0 / safe_w * (1.0 - n**2 / (3.0 * safe_w**2)),
        2.0 * np.arctan2(n, w) / safe_n,
    )
    return scale * xyz


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + q[..., :1] * t + np.cross(u, t)


def quat_to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def quat_distance(a, b) -> np.ndarray:
    """Euclidean distance between quaternions modulo sign."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.minimum(np.linalg.norm(a - b, axis=-1), np.linalg.norm(a + b, axis=-1))


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix with hat(v) @ u == cross(v, u)."""
    v = np.asarray(v, dtype=float)
    x, y, z = np.moveaxis(v, -1, 0)
    zero = np.zeros_like(x)
    m = np.stack([zero, -z, y, z, zero, -x, -y, x, zero], axis=-1)
    return m.reshape(v.shape[:-1] + (3, 3))


def right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of SO(3): exp(phi + d) ~= exp(phi) exp(J_r(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    small = theta < JACOBIAN_TAYLOR
    safe = np.where(small, 1.0, theta)
    c1 = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    c2 = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (safe - np.sin(safe)) / safe**3)
    k = hat(phi)
    return np.eye(3) - c1 * k + c2 * (k @ k)


def right_jacobian_inv(phi) -> np.ndarray:
    """Inverse of `right_jacobian`, valid for |phi| < pi."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    small = theta < JACOBIAN_TAYLOR
    safe = np.where(small, 1.0, theta)
    c = np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        1.0 / safe**2 - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    k = hat(phi)
    return np.eye(3) + 0.5 * k + c * (k @ k)


@dataclass(frozen=True, eq=False)
class Rotation:
    """A single rotation. `q` is canonical and unit-norm after construction."""

    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        if q.shape != (4,):
            raise InvalidArgumentError(f"quaternion must have 4 components, got shape {q.shape}")
        object.__setattr__(self, "q", quat_normalize(q))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(IDENTITY_QUAT.copy())

    @classmethod
    def exp(cls, phi) -> "Rotation":
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (3,):
            raise InvalidArgumentError(f"rotation vector must have 3 components, got shape {phi.shape}")
        return cls(quat_exp(phi))

    def log(self) -> Vec3:
        return quat_log(self.q)

    def compose(self, other: "Rotation") -> "Rotation":
        return Rotation(quat_mul(self.q, other.q))

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return self.compose(other)

    def inverse(self) -> "Rotation":
        return Rotation(quat_conj(self.q))

    def rotate(self, v) -> Vec3:
        return quat_rotate(self.q, np.asarray(v, dtype=float))

    def as_matrix(self) -> Mat3:
        return quat_to_matrix(self.q)

    def distance(self, other: "Rotation") -> float:
        return float(quat_distance(self.q, other.q))

    def __repr__(self) -> str:
        w, x, y, z = self.q
        return f"Rotation(w={w:.12g}, x={x:.12g}, y={y:.12g}, z={z:.12g})"


def exp(phi) -> Rotation:
    return Rotation.exp(phi)


def log(r: Rotation) -> Vec3:
    return r.log()


def compose(a: Rotation, b: Rotation) -> Rotation:
    return a.compose(b)


def rotate(r: Rotation, v) -> Vec3:
    return r.rotate(v)


def inverse(r: Rotation) -> Rotation:
    return r.inverse()
