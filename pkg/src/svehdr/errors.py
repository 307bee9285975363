"""Exception hierarchy.

Validation problems (bad shapes, bad configs, malformed files) derive from
``ValidationError`` and map to CLI exit code 1; numeric/runtime failures
derive from ``NumericError`` and map to exit code 2.
"""


class SveHdrError(Exception):
    """Base class for all package errors."""


class ValidationError(SveHdrError, ValueError):
    """Input violates a documented precondition."""


class DimensionError(ValidationError):
    """Tensor or image extents are incompatible."""


class ConfigError(ValidationError):
    """Invalid model, training or data configuration."""


class FormatError(ValidationError):
    """Malformed or unsupported file content."""


class TapeError(SveHdrError, RuntimeError):
    """Misuse of the gradient tape (non-scalar loss, consumed tape)."""


class NumericError(SveHdrError, ArithmeticError):
    """Non-finite values where finite ones are required."""

    def __init__(self, message, name=None):
        super().__init__(message)
        self.name = name
