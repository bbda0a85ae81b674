"""Exception types shared across the package.

The CLI maps these onto exit codes: :class:`DataError` (and its subclasses)
to 2, :class:`NumericError` to 3.
"""


class CotagError(Exception):
    """Base class for all package errors."""


class DataError(CotagError):
    """Input data violates a structural invariant."""


class ParseError(DataError):
    """Raw input could not be tokenized or decoded."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class NumericError(CotagError):
    """A numerical procedure has no solution or failed to converge."""


class FitError(NumericError):
    """A distribution fit failed. ``best`` holds the best iterate found, if any."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
