"""Exception hierarchy shared by every module of the package."""


class SSLCarmaError(Exception):
    """Base class for all package errors."""


class DomainError(SSLCarmaError, ValueError):
    """An argument lies outside the domain of an operation."""


class ValidationError(SSLCarmaError, ValueError):
    """A model or specification violates one of its invariants."""


class UnsupportedError(SSLCarmaError, ValueError):
    """The requested configuration is valid in principle but not implemented."""


class NumericalError(SSLCarmaError, ArithmeticError):
    """A numerical degeneracy (e.g. vanishing innovation variance) occurred."""


class NonConvergenceError(SSLCarmaError, RuntimeError):
    """An estimation routine failed to produce a usable optimum.

    ``trace`` holds whatever diagnostic records the optimizer collected.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
