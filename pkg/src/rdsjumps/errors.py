"""Exception hierarchy shared by all modules."""


class RDSError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RDSError, ValueError):
    """Malformed system, model file or run configuration.

    The offending field is available as ``field``.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DomainError(RDSError, ValueError):
    """Argument outside the mathematical domain (e.g. negative time)."""


class ProbabilityError(RDSError, ValueError):
    """A probability vector or matrix row failed validation."""


class NumericError(RDSError, ArithmeticError):
    """Non-finite values, solver failure or a runaway rejection loop."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class CapacityError(RDSError, ValueError):
    """Input exceeds a configured size cap."""


class RangeError(RDSError, IndexError):
    """Query outside the simulated time range."""


class SamplingError(RDSError, RuntimeError):
    """Sampling produced no usable data (e.g. all sampled pairs coincide)."""
