"""Exception types shared across the package."""


class MartApproxError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(MartApproxError, ValueError):
    """An argument lies outside the domain of the model (bad start value, zero mass...)."""


class ArgumentError(MartApproxError, ValueError):
    """An argument is malformed (zero horizon, unknown id, ...)."""


class CapabilityError(MartApproxError):
    """The requested computation is not available for this model/mode."""


class PreconditionError(MartApproxError, ValueError):
    """A mathematical precondition fails; ``witness`` carries the offending data."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NumericError(MartApproxError, ArithmeticError):
    """A numerical procedure failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateLimitError(MartApproxError):
    """The limiting variance is zero; compare with a point mass instead."""


class SizeError(MartApproxError, ValueError):
    """An exhaustive enumeration would be too large."""
