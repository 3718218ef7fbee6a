"""Exception hierarchy shared across the package."""


class BayesOCError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(BayesOCError, ValueError):
    pass


class EmptyInputError(BayesOCError, ValueError):
    pass


class InitializationError(BayesOCError, RuntimeError):
    """No finite-density starting point could be found for a sampler."""


class CurvatureError(BayesOCError, RuntimeError):
    """Hessian at the located mode is not negative definite."""


class DuplicateScenarioError(BayesOCError, ValueError):
    pass


class InsufficientDesignError(BayesOCError, ValueError):
    """Too few distinct training scenarios to identify a stage-2 model."""


class DirectionError(BayesOCError, ValueError):
    """Requested effect lies on the null side of the boundary."""


class ConfigurationError(BayesOCError, ValueError):
    pass


class UnreachableTargetError(BayesOCError, ValueError):
    """Assurance target not reached anywhere in the searched sample-size range."""

    def __init__(self, message: str, max_assurance: float, n_at_max: int):
        super().__init__(message)
        self.max_assurance = max_assurance
        self.n_at_max = n_at_max


class SimulationError(BayesOCError, RuntimeError):
    pass


class ConvergenceWarning(UserWarning):
    """Split-R-hat above threshold; the result is returned but flagged."""
