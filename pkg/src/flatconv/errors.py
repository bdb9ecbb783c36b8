"""Exception types raised across the package."""


class FlatConvError(ValueError):
    pass


class ShapeError(FlatConvError):
    """Element counts or extents do not line up."""


class RankError(FlatConvError):
    pass


class DimensionError(FlatConvError):
    """Channel spans of a kernel and its input disagree."""


class GeometryError(FlatConvError):
    """Kernel/stride geometry cannot be applied to the given extents."""


class UnsupportedGeometryError(GeometryError):
    pass
