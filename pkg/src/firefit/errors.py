"""Exception types shared across the package."""


class FirefitError(Exception):
    """Base class for all package-specific errors."""


class InvalidDimensionError(FirefitError, ValueError):
    """Grid dimensions or mesh steps violate their preconditions."""


class ShapeMismatchError(FirefitError, ValueError):
    """A field does not live on the expected grid."""


class OutOfDomainError(FirefitError, ValueError):
    """A point falls outside the grid bounding box."""


class RankDeficiencyError(FirefitError, ValueError):
    """Constraint rows are (numerically) linearly dependent."""


class AnchorError(FirefitError, ValueError):
    """A coarse-grid anchor is not on the lattice for its level."""


class PCGBreakdownError(FirefitError, RuntimeError):
    """Non-positive direction curvature inside conjugate gradients."""


class ConstraintDriftError(FirefitError, RuntimeError):
    """Constraint violation exceeded tolerance during descent."""


class OutOfCoverageError(FirefitError, ValueError):
    """A detection record lies beyond the padded grid coverage."""


class GeometryError(FirefitError, ValueError):
    """Invalid geometry for case generation."""


class ConfigError(FirefitError, ValueError):
    """Invalid or incomplete run configuration."""
