"""Exception taxonomy shared across the toolkit."""


class BayfwiError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(BayfwiError):
    """Invalid run configuration (bad stencil/CFL settings, schema violations)."""


class GeometryError(BayfwiError):
    """Source or receiver placed outside the computational grid."""


class ShapeError(BayfwiError):
    """Array dimensions inconsistent with the acquisition geometry."""


class InputError(BayfwiError):
    """Non-finite or otherwise unusable numeric input."""


class PreconditionError(BayfwiError):
    """A documented operation precondition was violated by the caller."""


class DomainError(BayfwiError):
    """Mathematical domain violation (e.g. perturbed density not positive)."""


class BoundsError(BayfwiError):
    """Density bounds certificate violated (weight not bounded away from zero)."""


class CalibrationError(BayfwiError):
    """Loss normalization impossible (zero loss at the reference point)."""


class OptimizationError(BayfwiError):
    """Optimizer failed to make progress (e.g. line search breakdown)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class IndefinitenessError(BayfwiError):
    """Curvature update would make the posterior covariance indefinite."""


class LinearAlgebraError(BayfwiError):
    """Matrix argument violates symmetry/positive-semidefiniteness requirements."""


class DegenerateDensityWarning(UserWarning):
    """Normalized density hit the positivity floor and was renormalized."""
