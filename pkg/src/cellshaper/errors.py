"""Exception types shared across the package."""


class CellshaperError(Exception):
    """Base class for package-specific errors."""


class InfeasibleScenarioError(CellshaperError):
    """Scenario geometry admits no valid user placement."""


class CoverageError(CellshaperError):
    """A queried position is outside the gain provider's coverage."""


class EvaluationError(CellshaperError):
    """A configuration evaluation failed; carries the offending user index if known."""

    def __init__(self, message, user_index=None):
        super().__init__(message)
        self.user_index = user_index


class SingularModelError(CellshaperError):
    """GP system matrix could not be factorized even at maximum jitter."""


class NotReadyError(CellshaperError):
    """Operation requires a fitted model that is not available yet."""


class InsufficientSourceError(CellshaperError):
    """Transfer-learning source dataset is too small for the requested mix."""


class ConfigError(CellshaperError):
    """Experiment configuration is invalid."""
