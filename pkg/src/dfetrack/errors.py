"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: invalid input -> 2, numeric
failure -> 3, I/O problems (plain OSError) -> 4.
"""


class DfeTrackError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(DfeTrackError, ValueError):
    """An argument violates an operation's precondition."""


class BorderError(InvalidInputError):
    """A window or region does not fit inside the image."""


class NumericError(DfeTrackError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""


class ModelFormatError(InvalidInputError):
    """A weights file has a bad magic, version, or truncated payload."""


class ModelShapeError(InvalidInputError):
    """A weights file does not match the expected layer shapes."""
