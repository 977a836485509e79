"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, validation/data
errors exit 2, numerical failures exit 3.
"""


class PartgenError(Exception):
    """Base class for all package errors."""


class ValidationError(PartgenError):
    """Invalid argument, malformed data, or violated precondition."""


class DataFormatError(ValidationError):
    """On-disk artifact is missing, corrupt, or has the wrong layout."""


class NumericalError(PartgenError):
    """A computation produced non-finite values or an unsolvable system."""


class UsageError(PartgenError):
    """Bad command-line invocation."""
