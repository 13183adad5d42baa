"""Configuration models and TOML loading.

Values resolve as: model defaults, then the TOML file (`--config` or `IMU_PREINT_CONFIG`),
then command-line flags.

    gravity = 9.81
    seed = 7
    masks = [[12.0, 15.5]]

    [noise]
    gyro_std = 0.004
    acc_std = 0.08
    density = false      # true: values are densities, divided by dt on ingestion

    [calibration]
    lr = 1e-3
    weight_decay = 1e-4
    epochs = 200
    huber_delta = 0.1
    loss_weights = [1.0, 1.0, 1.0]
    epsilon = 1e-3

    [solver]
    lambda0 = 1e-4
    max_iters = 100
    cost_tol = 1e-9
    step_tol = 1e-10
"""

from __future__ import annotations

import logging
import os
import sys
if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
from pathlib import Path
from typing import Any, Mapping

from pydantic import BaseModel, ConfigDict, Field, field_validator

logger = logging.getLogger(__name__)

CONFIG_ENV = "IMU_PREINT_CONFIG"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NoiseConfig(_Section):
    gyro_std: float = Field(0.004, ge=0.0, description="Gyroscope noise std per frame (rad/s).")
    acc_std: float = Field(0.08, ge=0.0, description="Accelerometer noise std per frame (m/s^2).")
    density: bool = Field(
        False,
        description="Interpret gyro_std/acc_std as continuous densities; variance is divided by dt.",
    )


class CalibrationConfig(_Section):
    lr: float = Field(1e-3, gt=0.0, description="Adam step size.")
    weight_decay: float = Field(1e-4, ge=0.0, description="L2 penalty added to the gradient.")
    epochs: int = Field(200, ge=1, description="Maximum optimizer iterations.")
    huber_delta: float = Field(0.1, gt=0.0, description="Huber threshold for every residual norm.")
    loss_weights: tuple[float, float, float] = Field(
        (1.0, 1.0, 1.0), description="Weights of rotation, velocity, position losses."
    )
    epsilon: float = Field(1e-3, ge=0.0, description="Weight of the covariance loss.")
    segment_length: int = Field(1000, ge=2, description="Training segment length in frames.")
    segment_stride: int = Field(1000, ge=1, description="Stride between segment starts in frames.")
    lr_decay: float = Field(0.5, gt=0.0, lt=1.0, description="Step-size factor after a rejected step.")
    min_lr: float = Field(1e-7, gt=0.0, description="Stop once the step size falls below this.")
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    gyro_fd_step: float = Field(1e-6, gt=0.0, description="Finite-difference step for b_g (rad/s).")
    acc_fd_step: float = Field(1e-5, gt=0.0, description="Finite-difference step for b_a (m/s^2).")


class SolverConfig(_Section):
    lambda0: float = Field(1e-4, gt=0.0, description="Initial Levenberg-Marquardt damping.")
    max_iters: int = Field(100, ge=1)
    cost_tol: float = Field(1e-9, ge=0.0, description="Stop when relative cost decrease is below this.")
    step_tol: float = Field(1e-10, ge=0.0, description="Stop when the step norm is below this.")
    lambda_up: float = Field(10.0, gt=1.0)
    lambda_down: float = Field(0.5, gt=0.0, lt=1.0)
    lambda_max: float = Field(1e16, gt=0.0)
    check_jacobians: bool = Field(False, description="Compare analytic and numeric Jacobians once.")
    reseed_sigma0: bool = Field(
        False, description="Re-solve with window covariances seeded from node marginals."
    )


class SimConfig(_Section):
    traj: str = "circle"
    duration: float = Field(60.0, gt=0.0)
    rate: float = Field(200.0, gt=0.0)
    radius: float = Field(10.0, gt=0.0)
    omega: float = Field(0.5, description="Angular rate for circle/figure8 (rad/s).")
    speed: float = Field(2.0, description="Line speed (m/s).")
    gyro_std: float = Field(0.0, ge=0.0)
    acc_std: float = Field(0.0, ge=0.0)
    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    acc_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gps_rate: float = Field(1.0, gt=0.0)
    gps_sigma: float = Field(0.1, ge=0.0)
    accel_diff: str = "forward"

    @field_validator("accel_diff")
    @classmethod
    def _known_diff(cls, value: str) -> str:
        if value not in ("forward", "central"):
            raise ValueError("accel_diff must be 'forward' or 'central'")
        return value


class BenchConfig(_Section):
    frames: list[int] = Field(default_factory=lambda: [1, 10, 100, 1000])
    repeat: int = Field(200, ge=1)


class AppConfig(_Section):
    gravity: float = Field(9.81, description="Gravity magnitude; world frame is z-up.")
    seed: int = 0
    masks: list[tuple[float, float]] = Field(default_factory=list)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    simulate: SimConfig = Field(default_factory=SimConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)

    @field_validator("masks")
    @classmethod
    def _ordered_masks(cls, value: list[tuple[float, float]]) -> list[tuple[float, float]]:
        for t0, t1 in value:
            if t1 < t0:
                raise ValueError(f"mask window [{t0}, {t1}] ends before it starts")
        return value


def load_config(path: str | Path | None = None) -> AppConfig:
    """Load the TOML config at `path`, or `IMU_PREINT_CONFIG`, or defaults."""
    if path is None:
        env_path = os.getenv(CONFIG_ENV, "").strip()
        path = env_path or None
    if path is None:
        return AppConfig()
    path = Path(path)
    with open(path, "rb") as handle:
        data = tomllib.load(handle)
    logger.info("Loaded config from %s", path)
    return AppConfig.model_validate(data)


def with_overrides(config: BaseModel, overrides: Mapping[str, Any]) -> BaseModel:
    """Copy of `config` with every non-None override applied and re-validated."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    if not updates:
        return config
    merged = config.model_dump()
    merged.update(updates)
    return type(config).model_validate(merged)
