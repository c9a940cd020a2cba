"""Exception types shared across the solver stack."""


class DimensionMismatchError(ValueError):
    """Inputs whose shapes or dimensions are inconsistent."""


class UnsupportedDimensionError(ValueError):
    """Operation restricted to a specific state dimension."""


class SizeLimitError(ValueError):
    """Input exceeds the size cap of an exact (combinatorial) routine."""


class ParameterDomainError(ValueError):
    """Parameter set outside the validity domain of a closed-form branch."""


class SingularityError(ArithmeticError):
    """A denominator vanished at a specific time point."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class DivergenceError(RuntimeError):
    """Simulated state blew up (non-finite or above the hard cap)."""

    def __init__(self, message: str, particle: int | None = None, step: int | None = None):
        super().__init__(message)
        self.particle = particle
        self.step = step


class RegressionError(RuntimeError):
    """Normal equations stayed singular after the automatic ridge bump."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class AssemblyError(ValueError):
    """Coupling condition cannot be turned into a coefficient set."""


class RootFindingError(RuntimeError):
    """Scalar root solve for the optimal control failed to converge."""


class InsufficientDataError(ValueError):
    """Not enough iterations to compute the requested statistic."""


class DifferentiabilityError(TypeError):
    """A price-curve derivative was required but not available."""


class ConfigError(ValueError):
    """Malformed or out-of-domain run configuration."""
