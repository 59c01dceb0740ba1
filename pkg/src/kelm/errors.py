"""Exception taxonomy shared by all kelm modules.

Validation/Data/Config errors indicate bad inputs (CLI exit code 1);
Usage/Numeric/Shape errors indicate runtime failures (exit code 2).
"""


class KelmError(Exception):
    """Base class for all kelm exceptions."""


class ShapeError(KelmError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericError(KelmError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class UsageError(KelmError, RuntimeError):
    """An API was called in a way its contract forbids."""


class DataError(KelmError, ValueError):
    """Input data violates a documented format or range."""


class ValidationError(DataError):
    """A file failed validation on load (message names the offending line)."""


class ConfigError(KelmError, ValueError):
    """A configuration value is out of its documented domain."""
