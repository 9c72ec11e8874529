"""Exception hierarchy shared across the toolkit.

Every error raised by recallkit derives from :class:`RecallError`, so callers
(and the CLI exit-code mapping) can distinguish our failures from genuine bugs.
"""


class RecallError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(RecallError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericDomainError(RecallError):
    """Input is outside the numeric domain (NaN/Inf, zero norm, sigma <= 0)."""


class InputError(RecallError):
    """A precondition on plain inputs was violated (empty text, k > n, ...)."""


class ParseError(RecallError):
    """Base class for checkpoint-container parse failures."""


class MalformedHeaderError(ParseError):
    """Container header is missing, not JSON, or structurally invalid."""


class TruncatedPayloadError(ParseError):
    """Payload is shorter than the header's byte ranges require."""


class DuplicateNameError(ParseError):
    """The same tensor name appears more than once in the header."""


class UnsupportedDtypeError(ParseError):
    """Header declares a dtype other than little-endian float32."""


class LayoutError(ParseError):
    """Byte ranges overlap, leave gaps, or fall outside the payload."""


class GroupingError(RecallError):
    """A tensor name cannot be assigned to a layer group."""


class AlignmentError(RecallError):
    """Representation sets disagree on sample ids or ordering."""


class CompletenessError(RecallError):
    """A similarity table is missing a model or layer required for merging."""


class CompatibilityError(RecallError):
    """Checkpoints to be merged differ in tensor names or shapes."""


class ValidationError(RecallError):
    """CLI/run configuration is inconsistent or references missing files."""
