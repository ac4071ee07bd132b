"""Transport-penalized one-step risk operators, their generators and Chernoff limits in one dimension."""

__version__ = "0.1.0"

from riskgen.errors import (
    ConfigError,
    DomainError,
    HorizonError,
    InvariantViolation,
    StabilityError,
    WindowTooNarrowError,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "HorizonError",
    "InvariantViolation",
    "StabilityError",
    "WindowTooNarrowError",
    "__version__",
]
