"""Exception types shared across the package."""


class SurvScopeError(Exception):
    """Base class for survscope errors."""


class NoEventsError(SurvScopeError):
    """Raised when an operation requires at least one observed event."""


class MalformedRecordError(SurvScopeError):
    """Raised when an administrative record violates basic consistency."""


class ConvergenceError(SurvScopeError):
    """Solver failed to converge; carries the last iterate."""

    def __init__(self, message, coefficients=None):
        super().__init__(message)
        self.coefficients = coefficients


class DivergenceError(SurvScopeError):
    """Training loss became non-finite."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class UndefinedMetricError(SurvScopeError):
    """Metric has no comparable pairs / no usable data."""


class TuningFailedError(SurvScopeError):
    """Every tuning trial failed; carries per-trial failures."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = list(failures or [])


class DegenerateRangeError(SurvScopeError):
    """Predictions span no usable range (e.g. constant)."""
