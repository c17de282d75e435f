"""Exception types raised across the package."""


class HiDISCError(Exception):
    """Base class for all package errors."""


class InvalidInputError(HiDISCError, ValueError):
    """Non-finite or malformed numeric input."""


class DomainError(HiDISCError, ValueError):
    """Input lies outside the domain of an operation (e.g. on the ball boundary)."""


class ConfigurationError(HiDISCError, ValueError):
    """Inconsistent or invalid configuration."""


class ShapeError(HiDISCError, ValueError):
    """Array dimensions do not match what an operation expects."""


class InsufficientBatchError(HiDISCError, ValueError):
    """A batch is too small for the requested reduction."""


class NonFiniteGradientError(HiDISCError, FloatingPointError):
    """A gradient contains NaN or inf; the current batch should be skipped."""


class DataFormatError(HiDISCError, ValueError):
    """A feature, config, report or checkpoint file could not be parsed."""


class NumericError(HiDISCError, FloatingPointError):
    """A numeric routine produced an invalid result (e.g. a non-PSD covariance)."""
