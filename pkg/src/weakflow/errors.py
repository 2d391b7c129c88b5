"""Exception hierarchy. Each class maps to one CLI error category."""


class WeakflowError(Exception):
    category = "runtime"


class ConfigError(WeakflowError):
    category = "config"


class GeometryError(WeakflowError):
    category = "geometry"


class SamplingError(GeometryError):
    pass


class DomainError(WeakflowError, ValueError):
    """Input outside the mathematical domain of an operation."""

    category = "numeric"


class NumericError(WeakflowError, ArithmeticError):
    category = "numeric"
