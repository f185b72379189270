"""Exception types shared across the package."""


class ElhomError(Exception):
    """Base class for all package errors."""


class SingularInput(ElhomError):
    """A matrix argument is singular beyond the supported tolerance."""


class NotExpandable(ElhomError):
    """The density has no quadratic expansion at the identity."""


class LengthMismatch(ElhomError):
    """Array length does not match the quadrature layout of the grid."""


class NotConverged(ElhomError):
    """Iterative solver exhausted its budget before reaching tolerance."""


class IndefiniteForm(ElhomError):
    """A negative Rayleigh quotient was detected on a form assumed PSD."""


class AllStartsFailed(ElhomError):
    """Every start of a multistart minimization failed to produce a result."""


class InvalidDelta(ElhomError):
    """Compression parameter outside the admissible range (0, 1/2)."""


class UnsupportedLoad(ElhomError):
    """Load specification incompatible with the Dirichlet set gamma."""


class FitIllConditioned(ElhomError):
    """Not enough sample points for the requested least-squares fit."""


class ConfigError(ElhomError):
    """Configuration file or parameter-validation failure."""
