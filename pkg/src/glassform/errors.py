"""Exception types shared across the package."""


class GlassformError(Exception):
    """Base class for all package errors."""


class DomainError(GlassformError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class RangeError(GlassformError, ValueError):
    """A grid or coordinate request falls outside the available data range."""


class GeometryError(GlassformError, ValueError):
    """A geometric construction failed (e.g. a self-intersecting offset)."""


class ValidationError(GlassformError, ValueError):
    """Inputs are inconsistent or degenerate."""


class MaterialLookupError(GlassformError, KeyError):
    """Unknown material name."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ModelLoadError(GlassformError, ValueError):
    """A persisted network could not be loaded."""
