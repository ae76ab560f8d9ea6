"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data and format
problems exit 2, numeric aborts exit 3.
"""


class VidcapError(Exception):
    """Base class for every error raised by this package."""


class ContractError(VidcapError):
    """A caller broke an API precondition."""


class DimensionError(VidcapError):
    """Operand shapes are incompatible."""


class DomainError(VidcapError):
    """A value lies outside an operation's mathematical domain."""


class RangeError(VidcapError):
    """An id or index is out of range."""


class FormatError(VidcapError):
    """A file does not conform to its declared format."""

    def __init__(self, message, *, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(VidcapError):
    """Dataset contents are missing, duplicated, or inconsistent."""


class NumericError(VidcapError):
    """Optimization hit a non-finite value and aborted."""
