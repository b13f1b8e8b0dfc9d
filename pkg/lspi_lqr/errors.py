"""Exceptions raised by the LQR solvers, estimators and harness."""


class LqrError(Exception):
    """Base class for every error raised by this package."""


class SymmetryError(LqrError, ValueError):
    """A matrix expected to be symmetric is not, beyond tolerance."""


class DimensionError(LqrError, ValueError):
    """Shapes of the inputs do not agree."""


class ParameterError(LqrError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class PositivityError(LqrError, ValueError):
    """A matrix expected to be positive definite is not."""


class InstabilityError(LqrError, ArithmeticError):
    """A closed-loop matrix has spectral radius at or above one."""

    def __init__(self, message: str, spectral_radius: float) -> None:
        super().__init__(message)
        self.spectral_radius = spectral_radius


class NotStabilizableError(LqrError, ArithmeticError):
    """The Riccati iteration did not converge within its iteration cap."""


class ConditioningError(LqrError, ArithmeticError):
    """A matrix that must be inverted is numerically singular."""


class DivergenceError(LqrError, RuntimeError):
    """The simulated state left the divergence ball."""

    def __init__(self, step: int, norm: float, context: str | None = None) -> None:
        where = f" ({context})" if context else ""
        super().__init__(
            f"state norm {norm:.3e} exceeded the divergence threshold at step {step}{where}"
        )
        self.step = step
        self.norm = norm
        self.context = context


class IdentifiabilityError(LqrError, ValueError):
    """Least-squares regressors are rank deficient."""


class DegenerateExplorationError(LqrError, ValueError):
    """A gradient estimator was given zero exploration noise."""


class ConfigError(LqrError, ValueError):
    """An experiment configuration failed validation."""
