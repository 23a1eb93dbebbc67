"""Exception hierarchy shared across the package.

Each branch maps to a CLI exit code: usage errors exit 2, data/format
errors exit 3, numeric failures exit 4.
"""


class FewtuneError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(FewtuneError):
    """Caller passed inconsistent shapes, ranges, or configuration."""

    exit_code = 2


class DataFormatError(FewtuneError):
    """A file is not in the expected format or version."""

    exit_code = 3


class CorruptionError(DataFormatError):
    """A file parsed partially and then ran out of (or past) its payload."""


class ValidationError(DataFormatError):
    """Structurally parseable data that violates a dataset invariant."""


class NumericError(FewtuneError):
    """A numeric operation produced non-finite values."""

    exit_code = 4
