"""Exception types shared across the package."""


class LiftedMacError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(LiftedMacError, ValueError):
    pass


class InvalidSubspaceError(LiftedMacError, ValueError):
    pass


class InvalidConfigError(LiftedMacError, ValueError):
    pass


class IncompleteInputError(LiftedMacError, ValueError):
    pass


class DomainError(LiftedMacError, ValueError):
    """Argument outside the mathematical domain of a function."""


class CostGuardError(LiftedMacError, ValueError):
    """Requested computation exceeds the enumeration budget."""


class DegeneratePosteriorError(LiftedMacError, ValueError):
    pass


class RangeError(LiftedMacError, OverflowError):
    """A log-domain quantity left the representable range."""


class NumericFailureError(LiftedMacError, RuntimeError):
    pass


class PreconditionError(LiftedMacError, ValueError):
    pass


class NoWaveError(LiftedMacError, ValueError):
    """Wave diagnostics requested on a history that never converged."""
