"""Exception hierarchy shared across the toolkit."""


class BioprobeError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(BioprobeError):
    """A value, record, or file violates a documented invariant."""


class DimensionMismatchError(ValidationError):
    """Array shapes or embedding widths do not agree."""


class DegenerateInputError(ValidationError):
    """Empty or non-finite input where real data is required."""


class FormatError(BioprobeError):
    """A file does not look like the expected format (bad magic, bad layout)."""


class VersionError(FormatError):
    """The file format version is not supported by this reader."""


class CorruptionError(FormatError):
    """The file is structurally recognizable but its payload is inconsistent."""


class UnsupportedFormatError(FormatError):
    """The file is recognizable but uses an unsupported codec or variant."""


class DivergenceError(BioprobeError):
    """Training produced a non-finite loss."""


class IllConditionedError(BioprobeError):
    """A linear system is singular or too ill-conditioned to solve reliably."""
