"""Exception hierarchy shared by all modules."""


class MomentFieldError(Exception):
    """Base class for every error raised by this package."""


class DomainError(MomentFieldError, ValueError):
    """An argument lies outside the domain of an operation (negative time, K = 0, ...)."""


class ValidationError(MomentFieldError, ValueError):
    """Input data violates a structural invariant (shape, symmetry, schema)."""


class PSDError(ValidationError):
    """A matrix that must be positive semidefinite has a significantly negative eigenvalue."""


class CapacityError(MomentFieldError):
    """A requested array would exceed the configured storage cap."""


class DegenerateSampleError(MomentFieldError, ValueError):
    """An estimator needs more samples than it was given."""


class QuadratureError(MomentFieldError, ArithmeticError):
    """Panel refinement hit its cap before reaching the requested tolerance."""


class ConditionError(MomentFieldError):
    """The hypotheses under which a moment identity holds are not satisfied."""
