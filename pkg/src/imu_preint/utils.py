"""Shared parsers for command-line and config values."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from imu_preint.errors import InvalidArgumentError


def parse_floats(text: str, count: int | None = None) -> np.ndarray:
    """Parse a comma-separated list of floats such as "0.02,0,0"."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        values = np.array([float(p) for p in parts], dtype=float)
    except ValueError as exc:
        raise InvalidArgumentError(f"Cannot parse numbers from {text!r}") from exc
    if count is not None and values.size != count:
        raise InvalidArgumentError(f"Expected {count} values, got {values.size} in {text!r}")
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError(f"Non-finite value in {text!r}")
    return values


def parse_vec3(text: str) -> np.ndarray:
    """Parse "x,y,z"; a single number is broadcast to all three axes."""
    values = parse_floats(text)
    if values.size == 1:
        return np.full(3, values[0])
    if values.size != 3:
        raise InvalidArgumentError(f"Expected 1 or 3 values, got {values.size} in {text!r}")
    return values


def parse_names(text: str, allowed: set[str] | None = None) -> list[str]:
    """Parse a comma-separated name list, checking membership in `allowed`."""
    names = [p.strip().lower() for p in text.split(",") if p.strip()]
    if not names:
        raise InvalidArgumentError("Empty name list")
    if allowed is not None:
        unknown = [n for n in names if n not in allowed]
        if unknown:
            raise InvalidArgumentError(
                f"Unknown name(s): {', '.join(unknown)}. Choose from: {', '.join(sorted(allowed))}"
            )
    return names


def as_vec3(value, name: str = "value") -> np.ndarray:
    """Coerce to a finite float vector of length 3."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(3, float(arr))
    if arr.shape != (3,):
        raise InvalidArgumentError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")
    return arr


def in_masks(t: np.ndarray, masks: Iterable[Sequence[float]] | None) -> np.ndarray:
    """True where t falls inside any closed [t0, t1] window."""
    hit = np.zeros(len(t), dtype=bool)
    for t0, t1 in masks or ():
        hit |= (t >= t0) & (t <= t1)
    return hit
