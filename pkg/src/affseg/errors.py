"""Exception types shared across the package."""


class AffsegError(Exception):
    """Base class for all package errors."""


class ConfigError(AffsegError):
    """Malformed or invalid configuration."""


class ShapeError(AffsegError):
    """Tensor shape inconsistent with the operation's contract."""


class DataError(AffsegError):
    """Dataset ingestion or label problem."""


class GenerationError(AffsegError):
    """Synthetic sample could not be generated under its constraints."""


class NumericError(AffsegError):
    """Non-finite values where finite ones are required."""
