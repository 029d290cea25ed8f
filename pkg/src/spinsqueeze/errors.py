"""Exception types shared across the package."""


class ModelError(ValueError):
    """Invalid physical parameters or an ill-defined model."""


class ConfigurationError(ValueError):
    """Mutually incompatible options (e.g. double-counted noise sources)."""


class NumericalError(RuntimeError):
    """A computation could not be carried out numerically."""


class UnstableModelError(NumericalError):
    """The drift matrix has eigenvalues with positive real part."""

    def __init__(self, message, max_real_part=None):
        super().__init__(message)
        self.max_real_part = max_real_part


class SingularSolveError(NumericalError):
    """The resolvent is singular at some analysis frequency."""

    def __init__(self, message, omega=None):
        super().__init__(message)
        self.omega = omega


class InfeasibleDesignError(NumericalError):
    """No nonnegative lens separations reproduce the target ray matrix."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual
