"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations

from typing import Any


class ImuPreintError(Exception):
    """Base class for every error raised by imu_preint."""


class InvalidArgumentError(ImuPreintError, ValueError):
    """Input violates a documented precondition."""


class DatasetFormatError(InvalidArgumentError):
    """A data file is empty, malformed or out of order."""

    def __init__(self, message: str, path: Any = None, row: int | None = None):
        location = ""
        if path is not None:
            location = f"{path}"
            if row is not None:
                location += f":{row}"
            location += ": "
        super().__init__(f"{location}{message}")
        self.path = path
        self.row = row


class NumericDomainError(ImuPreintError, ArithmeticError):
    """A matrix that must be positive definite is not."""


class DivergedError(ImuPreintError):
    """An optimizer produced a non-finite loss."""

    def __init__(self, message: str, last_iterate: Any = None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SolverFailureError(ImuPreintError):
    """The damped normal equations could not be solved."""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report
