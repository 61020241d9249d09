"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class PPPError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(PPPError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateSampleError(DomainError):
    """The normalizing order statistics coincide, so ``x_{N/2} == x_N``."""


class OutOfRangeError(DomainError):
    """A query falls outside the range covered by an increment table."""

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class NoSolutionError(DomainError):
    """A target value cannot be reached by the extrapolation curve."""
