"""Exception hierarchy shared across the package."""


class DynamapError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(DynamapError):
    """Invalid geometric construction (non-orthonormal rotation, bad box, ...)."""


class InvalidDepthError(GeometryError):
    """Backprojection requested for a non-positive depth."""


class DegenerateBoxError(DynamapError):
    """A zero-area box was supplied where a measurable box is required."""


class MapError(DynamapError):
    """Semantic octree construction or query failure."""


class DatasetError(DynamapError):
    """Sequence / trajectory / detection file parsing failure."""


class PipelineError(DynamapError):
    """End-to-end run failure, stamped with the offending frame."""
