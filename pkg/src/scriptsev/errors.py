"""Exception types shared across the package."""


class ScriptsevError(Exception):
    """Base class for all package errors."""


class DataError(ScriptsevError):
    """Corpus ingestion, parsing, split, or report-input problem."""


class ProviderError(ScriptsevError):
    """An embedding backend is unavailable or misbehaving."""


class TrainingError(ScriptsevError):
    """Training cannot proceed (bad splits, non-finite loss, fold failure)."""


class UnsupportedOperationError(ScriptsevError):
    """The loaded model lacks the head required for the requested operation."""
