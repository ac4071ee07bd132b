class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class HorizonError(DomainError):
    """Step size h is not below the penalty's validity horizon h0."""


class WindowTooNarrowError(DomainError):
    """The grid cannot hold the requested region after boundary propagation."""

    def __init__(self, message, required_widening=0.0):
        super().__init__(message)
        self.required_widening = required_widening


class StabilityError(DomainError):
    """An explicit scheme would violate its CFL bound."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class InvariantViolation(RuntimeError):
    """A computed result broke a numerical invariant it is supposed to satisfy."""
