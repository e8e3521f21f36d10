"""Exception types shared across the package."""


class AxivortError(Exception):
    """Base class for all package errors."""


class DomainError(AxivortError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """Kernel evaluated at a coincident point (eta = 0)."""


class QuadratureError(AxivortError, RuntimeError):
    """Adaptive quadrature failed to converge within its panel budget.

    Carries the best available estimate and the achieved error bound.
    """

    def __init__(self, message, estimate, error_estimate, panels):
        super().__init__(message)
        self.estimate = estimate
        self.error_estimate = error_estimate
        self.panels = panels


class AxisCrossingError(AxivortError, RuntimeError):
    """A particle reached r <= 0 during a time step."""

    def __init__(self, message, particle_index, t):
        super().__init__(message)
        self.particle_index = particle_index
        self.t = t


class PreconditionError(AxivortError, ValueError):
    """An operation was invoked outside its stated preconditions."""


class ResolutionError(AxivortError, ValueError):
    """Recorded series is too coarse for the requested verification depth."""


class ConfigError(AxivortError, ValueError):
    """Invalid run configuration; names the offending field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
