"""Exception types shared across the package."""


class OtfsraError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(OtfsraError, ValueError):
    """Operands have inconsistent dimensions."""


class DomainError(OtfsraError, ValueError):
    """A parameter lies outside its admissible range."""


class ContractError(OtfsraError, ValueError):
    """Inputs violate a modelling precondition (e.g. off-grid delay)."""


class AmbiguityError(OtfsraError, ValueError):
    """Two paths of one device share a delay tap with different Doppler,
    which leaves the per-tap phase factor undefined."""


class NumericError(OtfsraError, RuntimeError):
    """Non-finite values appeared where finite ones are required."""


class CgBreakdownError(NumericError):
    """Conjugate gradient hit zero curvature (operator not positive
    definite on the visited subspace)."""


class DivergenceError(NumericError):
    """Iterative inference diverged.  Carries the last finite iterate and
    the diagnostics collected so far."""

    def __init__(self, message, last_iterate=None, diagnostics=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.diagnostics = diagnostics if diagnostics is not None else []
