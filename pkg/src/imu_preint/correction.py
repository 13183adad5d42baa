"""Sensor correction and uncertainty models.

A correction adds a body-frame offset to every reading: w' = w + sigma_gyro, a' = a + sigma_acc.
An uncertainty model yields per-frame noise variances for covariance propagation.
Tabulated variants come from a CSV file aligned row by row with the IMU stream:

    t,sg_x,sg_y,sg_z,sa_x,sa_y,sa_z,eg_x,eg_y,eg_z,ea_x,ea_y,ea_z
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from imu_preint.covariance import NoiseDiag, NoiseSeries
from imu_preint.errors import DatasetFormatError, InvalidArgumentError
from imu_preint.preintegration import ImuSequence
from imu_preint.utils import as_vec3, parse_floats

logger = logging.getLogger(__name__)

CORRECTION_COLUMNS = [
    "t",
    "sg_x", "sg_y", "sg_z",
    "sa_x", "sa_y", "sa_z",
    "eg_x", "eg_y", "eg_z",
    "ea_x", "ea_y", "ea_z",
]

TIME_MATCH_TOL = 1e-6


def _check_alignment(model_t: np.ndarray, samples: ImuSequence, what: str) -> None:
    if len(model_t) != len(samples):
        raise InvalidArgumentError(
            f"{what} has {len(model_t)} rows but the IMU stream has {len(samples)} samples"
        )
    if len(model_t) and np.abs(model_t - samples.t).max() > TIME_MATCH_TOL:
        k = int(np.argmax(np.abs(model_t - samples.t) > TIME_MATCH_TOL))
        raise InvalidArgumentError(
            f"{what} timestamp {model_t[k]!r} does not match IMU timestamp {samples.t[k]!r} at row {k}"
        )


class CorrectionModel(ABC):
    @abstractmethod
    def offsets(self, samples: ImuSequence) -> tuple[np.ndarray, np.ndarray]:
        """Per-frame (sigma_gyro, sigma_acc), each (N, 3)."""


@dataclass(frozen=True)
class IdentityCorrection(CorrectionModel):
    def offsets(self, samples: ImuSequence) -> tuple[np.ndarray, np.ndarray]:
        n = len(samples)
        return np.zeros((n, 3)), np.zeros((n, 3))


@dataclass(frozen=True, eq=False)
class ConstantBias(CorrectionModel):
    """Constant gyroscope/accelerometer bias; applied as sigma = -b."""

    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "b_g", as_vec3(self.b_g, "b_g"))
        object.__setattr__(self, "b_a", as_vec3(self.b_a, "b_a"))

    @classmethod
    def from_vector(cls, theta) -> "ConstantBias":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:3], theta[3:6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.b_g, self.b_a])

    def offsets(self, samples: ImuSequence) -> tuple[np.ndarray, np.ndarray]:
        n = len(samples)
        return np.tile(-self.b_g, (n, 1)), np.tile(-self.b_a, (n, 1))


@dataclass(frozen=True, eq=False)
class TabulatedCorrection(CorrectionModel):
    t: np.ndarray
    sigma_gyro: np.ndarray
    sigma_acc: np.ndarray

    def offsets(self, samples: ImuSequence) -> tuple[np.ndarray, np.ndarray]:
        _check_alignment(self.t, samples, "correction table")
        return self.sigma_gyro, self.sigma_acc


class UncertaintyModel(ABC):
    @abstractmethod
    def variances(self, samples: ImuSequence) -> NoiseSeries:
        """Per-frame noise variances."""


@dataclass(frozen=True, eq=False)
class ConstantDiag(UncertaintyModel):
    noise: NoiseDiag = field(default_factory=NoiseDiag)

    @classmethod
    def from_std(cls, gyro_std, acc_std) -> "ConstantDiag":
        return cls(NoiseDiag.from_std(gyro_std, acc_std))

    def variances(self, samples: ImuSequence) -> NoiseSeries:
        return NoiseSeries.constant(self.noise, len(samples))


@dataclass(frozen=True, eq=False)
class TabulatedUncertainty(UncertaintyModel):
    t: np.ndarray
    eta_gyro: np.ndarray
    eta_acc: np.ndarray

    def variances(self, samples: ImuSequence) -> NoiseSeries:
        _check_alignment(self.t, samples, "uncertainty table")
        return NoiseSeries(self.eta_gyro, self.eta_acc)


VINS_MONO_GYRO_STD = 0.004
VINS_MONO_ACC_STD = 0.08


def vins_mono() -> ConstantDiag:
    """Fixed noise model with VINS-Mono standard deviations."""
    return ConstantDiag.from_std(VINS_MONO_GYRO_STD, VINS_MONO_ACC_STD)


def apply_correction(samples: ImuSequence, model: CorrectionModel) -> ImuSequence:
    sg, sa = model.offsets(samples)
    return samples.with_readings(samples.w + sg, samples.a + sa)


def uncertainty_of(samples: ImuSequence, model: UncertaintyModel) -> NoiseSeries:
    return model.variances(samples)


def write_correction_csv(
    path: str | Path,
    t: np.ndarray,
    sigma_gyro: np.ndarray,
    sigma_acc: np.ndarray,
    eta_gyro: np.ndarray | None = None,
    eta_acc: np.ndarray | None = None,
) -> Path:
    """Write a correction/uncertainty table; missing variances are written as zeros."""
    n = len(t)
    eta_gyro = np.zeros((n, 3)) if eta_gyro is None else eta_gyro
    eta_acc = np.zeros((n, 3)) if eta_acc is None else eta_acc
    data = np.column_stack([t, sigma_gyro, sigma_acc, eta_gyro, eta_acc])
    frame = pd.DataFrame(data, columns=CORRECTION_COLUMNS)
    path = Path(path)
    frame.to_csv(path, index=False)
    logger.info("Wrote %d correction rows to %s", n, path)
    return path


def load_correction_csv(path: str | Path) -> tuple[TabulatedCorrection, TabulatedUncertainty]:
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise DatasetFormatError("empty correction file", path=path) from exc
    missing = [c for c in CORRECTION_COLUMNS if c not in frame.columns]
    if missing:
        raise DatasetFormatError(f"missing columns: {', '.join(missing)}", path=path)
    values = frame[CORRECTION_COLUMNS].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values).all(axis=1)
    if bad.any():
        raise DatasetFormatError("malformed row", path=path, row=int(np.argmax(bad)) + 2)
    if np.any(values[:, 7:] < 0.0):
        row = int(np.argmax((values[:, 7:] < 0.0).any(axis=1))) + 2
        raise DatasetFormatError("negative variance", path=path, row=row)
    t = values[:, 0]
    return (
        TabulatedCorrection(t, values[:, 1:4], values[:, 4:7]),
        TabulatedUncertainty(t, values[:, 7:10], values[:, 10:13]),
    )


def parse_correction_spec(spec: str) -> CorrectionModel:
    """`bias:gx,gy,gz,ax,ay,az`, `none`, or a correction CSV path."""
    if spec.strip().lower() in ("", "none", "identity"):
        return IdentityCorrection()
    if spec.startswith("bias:"):
        return ConstantBias.from_vector(parse_floats(spec[len("bias:"):], count=6))
    return load_correction_csv(spec)[0]


def parse_uncertainty_spec(spec: str) -> UncertaintyModel:
    """`fixed:GYRO_STD,ACC_STD`, `vinsmono`, or a correction CSV path."""
    if spec.strip().lower() == "vinsmono":
        return vins_mono()
    if spec.startswith("fixed:"):
        gyro_std, acc_std = parse_floats(spec[len("fixed:"):], count=2)
        return ConstantDiag.from_std(gyro_std, acc_std)
    return load_correction_csv(spec)[1]
