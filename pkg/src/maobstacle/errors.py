"""Exception types shared across the package."""


class MaobstacleError(Exception):
    """Base class for all package errors."""


class DomainError(MaobstacleError):
    """Parameter outside its admissible range (e.g. exponent q >= n)."""


class SamplingError(MaobstacleError):
    """A function produced a non-finite value at a grid node."""


class OutOfDomainError(MaobstacleError):
    """A point or stencil leaves the grid rectangle."""


class DegenerateSetError(MaobstacleError):
    """A geometric primitive collapsed (collinear hull, zero area, ...)."""


class NotCompactlyContainedError(MaobstacleError):
    """A sublevel set touches the grid boundary where compact containment is required."""


class CenteredSectionError(MaobstacleError):
    """The centered-section fixed point iteration failed to contract."""


class ConvexityError(MaobstacleError):
    """An input violates a convexity precondition beyond tolerance."""


class EllipticityError(MaobstacleError):
    """The transformed equation lost ellipticity (psi_s / s has the wrong sign)."""


class ExistenceRadiusError(MaobstacleError):
    """Evaluation requested outside the validated existence radius of the ODE profile."""


class WindowError(MaobstacleError):
    """Too few resolvable probe distances or dyadic levels in a fitting window."""


class EnvelopeError(MaobstacleError):
    """Convex envelope construction failed on degenerate boundary data."""


class SpecError(MaobstacleError):
    """A problem specification violates its invariants (e.g. negative boundary data)."""


class ConfigError(MaobstacleError):
    """Invalid run configuration; carries the offending field name."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field '{field}': {message}")
