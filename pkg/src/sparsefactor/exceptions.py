"""Exception hierarchy for estimation and input failures."""


class FactorModelError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(FactorModelError, ValueError):
    """Input has an unusable shape (e.g. fewer than two time periods)."""


class ParameterError(FactorModelError, ValueError):
    """A tuning or hyper-parameter is outside its admissible range."""


class InvalidInputError(FactorModelError, ValueError):
    """A matrix argument violates a structural requirement (symmetry, positive diagonal, ...)."""


class SingularMatrixError(FactorModelError):
    """A matrix that must be invertible is numerically singular."""


class DefinitenessError(FactorModelError):
    """A covariance that must be positive definite is not."""


class NumericalError(FactorModelError):
    """A linear solve or decomposition failed during iteration."""


class SearchFailureError(FactorModelError):
    """A grid/bisection search found no admissible point."""


class StepFailureError(FactorModelError):
    """An optimization step could not produce an admissible iterate.

    Carries ``lambda_min``, the smallest eigenvalue of the last rejected
    iterate, for diagnostics.
    """

    def __init__(self, message, lambda_min=None):
        super().__init__(message)
        self.lambda_min = lambda_min


class ConfigError(FactorModelError, ValueError):
    """A run configuration is malformed or inconsistent."""
