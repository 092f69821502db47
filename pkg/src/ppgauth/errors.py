"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI:
    2 -> usage / argument errors
    3 -> I/O and dataset errors
    4 -> schema-version mismatches
    5 -> numeric degeneracy
"""


class PpgError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ArgumentError(PpgError, ValueError):
    """Invalid argument value (non-positive duration, bad ranges, ...)."""

    exit_code = 2


class EmptyInputError(ArgumentError):
    """An operation received an empty collection where >= 1 item is required."""


class ShapeError(ArgumentError):
    """Tensor shape mismatch; message names the offending dimension."""


class ConfigurationError(ArgumentError):
    """Inconsistent configuration (e.g. channels not divisible by reduction)."""


class SamplingError(ArgumentError):
    """A pair-sampling request that cannot be satisfied."""


class MetricUndefinedError(PpgError):
    """Threshold metrics need at least one positive and one negative score."""

    exit_code = 5


class NumericDegeneracyError(PpgError):
    """Degenerate numeric input (e.g. zero-norm embedding)."""

    exit_code = 5


class DatasetError(PpgError, OSError):
    """Base class for on-disk dataset problems."""

    exit_code = 3


class MissingManifestError(DatasetError):
    """Dataset directory has no manifest file."""


class DanglingEntryError(DatasetError):
    """Manifest references a record file that does not exist."""


class ChecksumMismatchError(DatasetError):
    """Record file content does not match its manifest checksum."""


class ChannelLengthError(DatasetError):
    """Record channels have inconsistent lengths on load."""


class SchemaVersionError(PpgError):
    """File format version is not supported by this build."""

    exit_code = 4


class EnrollmentFailedError(PpgError):
    """Stream ended before any segment passed the quality gate."""

    exit_code = 1


class NotEnrolledError(PpgError):
    """Authentication was requested for an unknown user."""

    exit_code = 1
