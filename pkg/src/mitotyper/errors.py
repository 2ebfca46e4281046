"""Exception hierarchy shared across the toolkit.

Every error raised by pipeline code derives from MitotyperError so the CLI
can convert any failure into a one-line diagnostic and a nonzero exit.
"""


class MitotyperError(Exception):
    """Base class for all toolkit errors."""


class EmptyHistogramError(MitotyperError):
    """Histogram has zero total mass."""


class BlackBackgroundError(MitotyperError):
    """White-balance background estimate has a zero channel."""


class DegenerateBasisError(MitotyperError):
    """Stain basis matrix is singular or ill-conditioned."""


class NonSquareImageError(MitotyperError):
    """Operation requires a square image."""


class EmptyRoiError(MitotyperError):
    """Region of interest (or intensity sample) contains no pixels."""


class ImageTooSmallError(MitotyperError):
    """Image is smaller than the requested patch size."""


class TableError(MitotyperError):
    """Feature-table validation or parse failure."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateTrainingError(MitotyperError):
    """Training rows contain fewer than two classes."""


class InsufficientTreesError(MitotyperError):
    """No out-of-bag rows available for error estimation."""


class CohortError(MitotyperError):
    """Cohort index is inconsistent or too small for the requested analysis."""


class DegenerateClassError(MitotyperError):
    """A class lacks positives or negatives for ROC computation."""


class DissimilarityError(MitotyperError):
    """Dissimilarity matrix unusable for embedding."""


class SynthSpecError(MitotyperError):
    """Synthetic cohort specification cannot be realised."""


class ConfigError(MitotyperError):
    """Configuration file or value is invalid."""


class PipelineError(MitotyperError):
    """A spot could not be carried through the processing pipeline."""
