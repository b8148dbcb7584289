"""Exception types shared across the package."""


class LandregError(Exception):
    """Base class for all landreg errors."""


class SingularKernelError(LandregError):
    """Kernel matrix is not positive definite (typically coincident landmarks)."""


class IntegrationDivergedError(LandregError):
    """A time integration produced a non-finite state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"integration diverged at step {step}")


class OutOfRangeError(LandregError):
    """A query time lies outside the path interval."""


class DegeneratePairError(LandregError):
    """Two landmarks coincide, so their inter-particle unit vector is undefined."""


class MemoryBudgetError(LandregError):
    """A requested dense covariance exceeds the configured byte budget."""


class IllConditionedObservationError(LandregError):
    """The observation covariance block could not be factorised."""


class DegenerateCurvatureError(LandregError):
    """All eigenvalues of a Laplace Hessian were clipped away."""


class InvalidParameterError(LandregError):
    """A parameter value is outside the valid range for the operation."""


class NotConvergedWarning(UserWarning):
    """An iterative solver stopped at its iteration cap."""


class InconsistentCovarianceWarning(UserWarning):
    """PSD clipping removed a non-negligible part of a covariance."""
