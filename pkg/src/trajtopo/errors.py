"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: invalid input -> 2, numerical
failure -> 3. Plain OSError is left alone for filesystem problems.
"""


class TrajtopoError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(TrajtopoError):
    """An argument, config value, or input file violates a precondition."""


class UnsupportedVersionError(InvalidInputError):
    """Artifact schema version is not supported by this build."""


class NumericalFailureError(TrajtopoError):
    """A solver or estimator could not produce a trustworthy value."""


class UndefinedStatisticError(TrajtopoError):
    """A statistic is undefined for the given data (e.g. zero variance)."""
