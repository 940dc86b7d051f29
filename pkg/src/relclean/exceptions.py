"""Exception hierarchy shared by all relclean modules."""


class RelcleanError(Exception):
    """Base class for all errors raised by relclean."""


class ContractError(RelcleanError, ValueError):
    """An input violates a documented precondition (shape, range, emptiness)."""


class NumericalError(RelcleanError, ArithmeticError):
    """A computation produced or received non-finite values, or failed to converge."""


class FormatError(RelcleanError, ValueError):
    """A file could not be parsed.

    Parameters
    ----------
    message : str
        What went wrong.
    path : str, optional
        File being read.
    location : str, optional
        Byte offset or line number of the failure, already formatted.
    """

    def __init__(self, message, path=None, location=None):
        self.path = None if path is None else str(path)
        self.location = location
        parts = [message]
        if location is not None:
            parts.insert(0, f"{location}:")
        if path is not None:
            parts.insert(0, f"{self.path}:")
        super().__init__(" ".join(parts))


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class NonFiniteValueError(FormatError):
    pass


class DuplicateIdError(FormatError):
    pass


class TrailingDataError(FormatError):
    pass


class LabelParseError(FormatError):
    pass


class RelevanceRangeError(FormatError):
    pass
