"""Error taxonomy shared across the pipeline.

Every error raised by this package derives from :class:`BundlegenError`, so
callers (and the CLI exit-code mapping) can distinguish our failures from
genuine bugs.
"""


class BundlegenError(Exception):
    """Base class for all package errors."""


class DatasetError(BundlegenError):
    """Malformed dataset file or referential-integrity violation."""


class RetrievalError(BundlegenError):
    """Embedding or nearest-neighbor query failure (e.g. dimension mismatch)."""


class ProviderError(BundlegenError):
    """Chat or embedding provider failed after retries."""


class MockScriptMiss(ProviderError):
    """No mock rule matched and the script has no fallback response."""


class AnswerFormatError(BundlegenError):
    """Model answer text does not contain the expected structure."""


class RatingError(BundlegenError):
    """Rater responses could not be parsed often enough to average."""


class StageError(BundlegenError):
    """Pipeline stage cannot run (missing prerequisite artifacts, lock held,
    or config mismatch against an existing run directory)."""
