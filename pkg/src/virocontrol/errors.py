"""Exception types shared across the package."""


class VirocontrolError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(VirocontrolError):
    """Invalid input data, parameters, or run configuration."""


class SolverError(VirocontrolError):
    """A linear solve failed to reach the requested residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class IterationError(VirocontrolError):
    """A fixed-point iteration failed to converge within its cap."""

    def __init__(self, message: str, last_increment: float, iterations: int):
        super().__init__(message)
        self.last_increment = last_increment
        self.iterations = iterations


class VerificationError(VirocontrolError):
    """A runtime verification (bounds, gradient checks) did not pass."""
