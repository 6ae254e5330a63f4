"""Exception hierarchy.

Validation problems (bad input) and numerical failures (degenerate or
inconsistent data) are kept apart so the CLI can map them to exit codes.
"""


class GTRIdentError(Exception):
    """Base class for all package errors."""


class ValidationError(GTRIdentError, ValueError):
    """Input violates a documented precondition or type invariant."""


class DomainError(ValidationError):
    """Argument outside the domain of a scalar function."""


class DeskScaleExceeded(ValidationError):
    """Tree too large for exhaustive spectral expansion."""


class NumericalError(GTRIdentError, ArithmeticError):
    """Numerical failure: degeneracy, inconsistency or non-identifiability."""


class DegenerateInstanceError(NumericalError):
    """The shape equation has no isolated positive root."""


class NonIdentifiableError(NumericalError):
    """Parameters cannot be recovered from the supplied distribution."""


class InconsistentDistributionError(NumericalError):
    """Tensor is not (numerically) a GTR+Gamma joint distribution."""


class UnsupportedRegimeError(NumericalError):
    """Exceptional parameter regime outside the supported classification."""


class InternalInconsistencyError(NumericalError):
    """A situation ruled out by theory was encountered numerically."""


class NotATreeMetricError(NumericalError):
    """Distances violate the four-point condition or imply bad edges."""
