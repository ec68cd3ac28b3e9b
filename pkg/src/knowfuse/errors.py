"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so new error types should
subclass one of the three top branches.
"""


class KnowfuseError(Exception):
    """Base class for all package errors."""


class ConfigError(KnowfuseError):
    """Invalid configuration, contract misuse, or checkpoint/config mismatch."""

    exit_code = 2


class DataError(KnowfuseError):
    """Malformed or missing input data."""

    exit_code = 3


class NumericError(KnowfuseError):
    """Non-finite values or numerically undefined results."""

    exit_code = 4


class DimensionError(ConfigError):
    """Shape-incompatible operands."""


class LookupMissingError(DataError):
    """A referenced entity, embedding, or score is absent."""


class CoverageError(DataError):
    """An external score file does not cover every required pair."""
