"""Exception types shared across the library."""


class ErgodiffError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(ErgodiffError):
    """A constructor parameter violates its documented range."""


class DimensionMismatchError(ErgodiffError):
    """Operands live in different phase-space dimensions."""


class IntegrationFailureError(ErgodiffError):
    """Flow integration produced a non-finite state.

    Carries the flow time at which the failure was detected.
    """

    def __init__(self, message, s=None):
        super().__init__(message)
        self.s = s


class WeightMatrixError(ErgodiffError):
    """A weight matrix is not symmetric positive definite at a node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ConfigurationError(ErgodiffError):
    """An experiment or solver configuration is inconsistent."""


class CapabilityError(ErgodiffError):
    """An input object lacks an optional capability required here."""


class SolverError(ErgodiffError):
    """A linear solve failed to meet its residual contract."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class OutOfDomainError(ErgodiffError):
    """A trajectory or interpolation point left a Dirichlet box."""


class UnsupportedModeError(ErgodiffError):
    """The requested mode is outside this implementation's scope."""


class DegenerateFitError(ErgodiffError):
    """Rate fitting received unusable (non-positive) error values."""
