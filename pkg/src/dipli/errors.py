"""Exception hierarchy shared by all dipli modules."""


class DipliError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DipliError, ValueError):
    """Invalid configuration value or combination of values."""


class ShapeMismatch(DipliError, ValueError):
    pass


class TooSmall(DipliError, ValueError):
    pass


class DimNotDivisible(ConfigError):
    pass


class LengthMismatch(DipliError, ValueError):
    pass


class EmptyStack(DipliError, ValueError):
    pass


class BadDims(DipliError, ValueError):
    pass


class NonPositiveSigma(ConfigError):
    pass


class ZeroOutputSize(ConfigError):
    pass


class OddSpatialDims(ShapeMismatch):
    pass


class ZeroMass(DipliError, ValueError):
    pass


class ZeroCount(DipliError, ValueError):
    pass


class TooSmallForPyramid(TooSmall):
    pass


class InvalidConfig(ConfigError):
    pass


class NonScalarLoss(DipliError, ValueError):
    pass


class MissingGrad(DipliError, RuntimeError):
    pass


class NonFiniteLoss(DipliError, FloatingPointError):
    """The optimization loss became NaN or infinite.

    The iteration at which this happened is available as ``iteration``.
    """

    def __init__(self, iteration, value):
        super().__init__(f"non-finite loss {value!r} at iteration {iteration}")
        self.iteration = iteration
        self.value = value


class IoFailure(DipliError, OSError):
    pass


class ImageFormatError(DipliError, ValueError):
    """Malformed or unsupported image file; ``offset`` is the byte position."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnknownFormat(ImageFormatError):
    pass


class CorruptHeader(ImageFormatError):
    pass


class TruncatedData(ImageFormatError):
    pass
