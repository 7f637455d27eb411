"""Exception types raised across the package.

All of them derive from ``ValueError`` so callers that only care about bad
input can catch that.
"""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class UnsupportedOrderError(ValueError):
    """Bessel order not representable or above the supported cap."""


class RangeError(ValueError):
    """Sampling range violates an admissibility constraint."""


class ConfigError(ValueError):
    """Invalid grid, backend or run configuration."""


class ShapeError(ValueError):
    """Fields living on different discretizations were combined."""


class ProjectionError(ValueError):
    """Quadratic form is not positive, so no fibre maximum exists."""


class PreconditionError(ValueError):
    """A documented precondition of an operation does not hold."""


class DegenerateInitError(ValueError):
    """Initial guess for the fixed-point solver is unusable."""


class WindowError(ValueError):
    """Far-field fitting window overlaps the source support."""
