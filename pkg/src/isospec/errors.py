"""Exception hierarchy shared by all modules."""


class IsospecError(Exception):
    """Base class for all package errors."""


class DomainError(IsospecError, ValueError):
    """Input outside the domain of an operation (e.g. evaluation at the origin)."""


class PreconditionError(IsospecError, ValueError):
    """A documented precondition of an operation does not hold."""


class TrustRegionError(IsospecError):
    """A request reaches beyond the region where a spectrum table is complete."""


class ConvergenceError(IsospecError, RuntimeError):
    """A numerical procedure failed to reach its tolerance."""


class EvaluationError(IsospecError, ArithmeticError):
    """A function returned non-finite values where finite values were required."""


class ConfigError(IsospecError, ValueError):
    """Invalid experiment configuration. ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
