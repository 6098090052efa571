"""Exception types shared across the package."""


class ChaseError(Exception):
    """Base class for all package errors."""


class ConfigError(ChaseError, ValueError):
    """Invalid parameters or configuration."""


class DimensionError(ChaseError, ValueError):
    """Array shapes do not agree."""


class NonFiniteError(ChaseError, ValueError):
    """Inputs contain NaN or infinite values."""


class SizeError(ChaseError, ValueError):
    """Problem exceeds the combinatorial guard of an exhaustive routine."""


class UnknownSensorError(ChaseError, KeyError):
    """A grid index was tasked that hosts no sensor."""


class EmptySupportError(ChaseError, ValueError):
    """An operation needing at least one support grid received none."""


class MaxRoundsExceeded(UserWarning):
    """Adaptive loop hit ``max_rounds`` before the termination check held."""
