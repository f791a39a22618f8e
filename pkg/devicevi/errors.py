"""
Exception types shared by every module.

The CLI maps each class to a distinct exit code (see cli.EXIT_CODES).
"""
from typing import Optional


class DeviceVIError(Exception):
    """Base class for all errors raised by this package."""


class InputDomainError(DeviceVIError, ValueError):
    """A value lies outside the support it must live in."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class PreconditionError(DeviceVIError, ValueError):
    """An operation was called with arguments it does not accept."""


class NumericalBreakdownError(DeviceVIError, ArithmeticError):
    """A computation produced a non-finite or structurally invalid quantity."""

    def __init__(
        self,
        message: str,
        iteration: Optional[int] = None,
        sample_index: Optional[int] = None,
        trace: Optional[list] = None,
    ):
        super().__init__(message)
        self.iteration = iteration
        self.sample_index = sample_index
        self.trace = trace or []


class InconsistencyError(DeviceVIError, ArithmeticError):
    """A quadrature estimate contradicts a property it must satisfy."""


class ConfigError(DeviceVIError, ValueError):
    """A run configuration or override could not be parsed or validated."""


class MissingInputError(DeviceVIError, FileNotFoundError):
    """A referenced input file does not exist."""
