"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems are usage
errors (1), data and shape problems are data errors (2), non-finite
numerics are numeric failures (3).
"""


class SpotnetError(Exception):
    """Base class for all package errors."""


class ConfigError(SpotnetError):
    """Invalid configuration value (bad dimension, even kernel, rate >= 1, ...)."""


class DimensionError(SpotnetError):
    """Array shape does not match what an operation expects."""


class DataError(SpotnetError):
    """Bad file format, inconsistent records, unparseable text, or an
    impossible sampling request."""


class NumericError(SpotnetError):
    """A non-finite value appeared where finite math is required."""
