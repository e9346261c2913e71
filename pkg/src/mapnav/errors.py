"""Exception hierarchy shared across the package."""


class MapnavError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(MapnavError):
    """Array shapes or grid sizes do not line up."""


class InvalidNodeError(MapnavError):
    """A node id is unknown to the world or map it was used with."""


class UnreachableError(MapnavError):
    """No path exists between the requested nodes."""


class CacheMissError(MapnavError):
    """A visited node was expected to carry a point-cloud cache but does not."""


class VocabError(MapnavError):
    """A token id falls outside the configured vocabulary."""


class LabelError(MapnavError):
    """A supervision target is not part of the current action space."""


class GenerationError(MapnavError):
    """Procedural world generation received infeasible parameters."""


class ValidationError(MapnavError):
    """A serialized artifact failed header, shape, or schema validation."""
