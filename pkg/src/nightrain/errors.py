"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericsError -> 3. Everything else is a bug.
"""


class NightRainError(Exception):
    """Base class for all package errors."""


class ShapeError(NightRainError, ValueError):
    """Tensor/clip dimension mismatch or an unsupported geometry."""


class ConfigError(NightRainError):
    """Invalid configuration value or inconsistent preset."""


class DataError(NightRainError):
    """Missing, malformed or mismatched data on disk."""


class NumericsError(NightRainError):
    """NaN/Inf reached a value that must stay finite."""


class DegeneratePairError(NightRainError):
    """A pseudo pair whose mask selects nothing; callers must skip it."""
