"""Exception hierarchy.

Every error carries a stable machine-readable ``code`` (the class name) so
the CLI can emit it on stderr for scripting.
"""


class OrdinoError(Exception):
    """Base class for all errors raised by this package."""

    @property
    def code(self) -> str:
        return type(self).__name__


# score ingestion
class ParseError(OrdinoError):
    """Malformed or unreadable score file."""


class UnsupportedScore(OrdinoError):
    """Score contains no usable pitched piano content."""


class OutOfRangePitch(OrdinoError):
    """Pitch outside the 88-key piano range (MIDI 21..108)."""


class LabelMismatch(OrdinoError):
    """Label file and score directory disagree about a piece."""


class InsufficientData(OrdinoError):
    """Not enough entries to compute the requested statistic."""


# representations
class EmptySequence(OrdinoError):
    """Operation requires a non-empty note sequence."""


class FormatError(OrdinoError):
    """Bad magic or version in a binary embedding file."""


class SizeMismatch(OrdinoError):
    """Embedding header dimensions disagree with the payload size."""


class NonFiniteValue(OrdinoError):
    """NaN or infinity found where finite values are required."""


class LengthMismatch(OrdinoError):
    """Feature sequences do not share a common note axis."""


# numerical kernel
class ShapeMismatch(OrdinoError):
    """Array shapes incompatible with the requested operation."""


class NonFiniteGradient(OrdinoError):
    """NaN or infinity found in gradients at optimizer-step time."""


# classifier
class WidthMismatch(OrdinoError):
    """Branch summary widths differ where equal widths are required."""


class CoverageMismatch(OrdinoError):
    """Ensemble members do not cover the same set of pieces."""


# evaluation
class LabelOutOfRange(OrdinoError):
    """Label or prediction outside 1..K."""


# cli / experiment plumbing
class ConfigError(OrdinoError):
    """Invalid or inconsistent experiment configuration."""


class DataError(OrdinoError):
    """Data required by the experiment is missing or inconsistent."""
