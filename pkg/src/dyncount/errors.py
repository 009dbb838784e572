"""Exception and warning types shared across the package."""


class DyncountError(Exception):
    """Base class for all package errors."""


class ConfigError(DyncountError):
    """Invalid model specification or run configuration."""


class DataError(DyncountError):
    """Invalid observations or unreadable data files."""


class ConvergenceError(DyncountError):
    """Newton iteration failed to converge.

    Carries the last iterate so callers can inspect where the search stalled.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class NumericError(DyncountError):
    """Numerical breakdown, e.g. a non-positive-definite curvature matrix."""


class SelectionError(DyncountError):
    """Smoothing-parameter search found no finite objective value."""


class SequencingError(DyncountError):
    """Online update received batches that do not continue the time axis."""


class MetricError(DyncountError):
    """Metric inputs violate a precondition (e.g. non-positive predictions)."""


class SnapshotFormatError(DyncountError):
    """Snapshot file has an unsupported version or cannot be parsed."""


class NumericWarning(UserWarning):
    """Raised when a linear predictor is clamped inside an exponential."""
