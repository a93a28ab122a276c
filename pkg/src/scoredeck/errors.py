"""Exception types shared across the scoredeck package."""


class ScoredeckError(Exception):
    """Base class for all scoredeck errors."""


class EmptyDocument(ScoredeckError):
    """Raised when a document has no usable content."""


class SchemaError(ScoredeckError):
    """A tabular input is missing required columns."""


class RowError(ScoredeckError):
    """A tabular row is malformed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"row {line_no}: {message}")
        self.line_no = line_no


class DomainError(ScoredeckError):
    """An argument is outside its mathematical domain."""


class DuplicateKey(ScoredeckError):
    """A (bid, question) pair occurs more than once."""


class DataError(ScoredeckError):
    """A dataset is empty or otherwise unusable."""


class ShapeError(ScoredeckError):
    """Tensor shapes are incompatible for an operation."""


class RankError(ScoredeckError):
    """A scalar was required but a higher-rank tensor was supplied."""


class KinkError(ScoredeckError):
    """Gradient check could not find a sample point away from kinks."""


class NonFiniteError(ScoredeckError):
    """NaN or Inf detected in debug mode."""


class EmptySequence(ScoredeckError):
    """All positions of a sequence are padding."""


class ZeroBaseline(ScoredeckError):
    """Relative change is undefined because the baseline prediction is ~0."""


class AnnotationError(ScoredeckError):
    """Gold annotation spans are invalid (overlapping or out of bounds)."""


class ConfigError(ScoredeckError):
    """A configuration value violates its documented bounds."""


class VersionError(ScoredeckError):
    """A model file was written by an incompatible format version."""


class FormatError(ScoredeckError):
    """A model file is corrupt or truncated."""
