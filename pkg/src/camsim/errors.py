"""Exception and warning types shared across the package."""


class CamsimError(Exception):
    """Base class for all package errors."""


class DimensionError(CamsimError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ParameterError(CamsimError, ValueError):
    """A scalar argument is outside its valid domain."""


class DegenerateDataError(CamsimError, ValueError):
    """Not enough usable data to fit or train."""


class StateError(CamsimError, RuntimeError):
    """An object is not in the state an operation requires."""


class NumericError(CamsimError, ArithmeticError):
    """A computation produced non-finite values."""


class FormatError(CamsimError):
    """Malformed on-disk data.

    ``offset`` is the byte offset (or line number for text files) at which
    the problem was detected, or ``None`` when it does not apply.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SettingsRangeWarning(UserWarning):
    """Camera settings fall outside the range the dataset was sampled from."""
