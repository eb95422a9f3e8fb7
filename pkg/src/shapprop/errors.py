"""Exception types raised across the package."""


class ShapPropError(Exception):
    """Base class for all library errors."""


class ParseError(ShapPropError, ValueError):
    """A model, input or config file could not be parsed."""


class ShapeError(ShapPropError, ValueError):
    """Tensor or layer dimensions are inconsistent."""


class UnsupportedLayer(ShapPropError, ValueError):
    """A layer kind the engine does not implement."""


class UnsupportedModel(ShapPropError, ValueError):
    """The model structure is not usable by the requested method."""


class InvalidArgument(ShapPropError, ValueError):
    pass


class TooManyFeatures(ShapPropError, ValueError):
    """Exact enumeration was requested for too many input features."""


class LengthMismatch(ShapPropError, ValueError):
    pass


class DegenerateInput(ShapPropError, ValueError):
    """A statistic is undefined for the given input (e.g. a constant vector)."""


class ConfigError(ShapPropError, ValueError):
    pass
