"""Exception types raised across the package."""


class BitVOError(Exception):
    """Base class for all errors raised by bitvo."""


class NonPositiveDepth(BitVOError):
    pass


class DegenerateBaseline(BitVOError):
    pass


class BehindCamera(BitVOError):
    pass


class DegenerateRay(BitVOError):
    pass


class BorderCorner(BitVOError):
    """Corner too close to the image border for a full 7x7 window."""


class InvalidBounds(BitVOError):
    pass


class EmptyList(BitVOError):
    pass


class NumericalFailure(BitVOError):
    pass


class InsufficientMatches(BitVOError):
    pass


class InsufficientCorrespondences(BitVOError):
    pass


class DegenerateConfiguration(BitVOError):
    pass


class CheiralityAmbiguity(BitVOError):
    pass


class NotReady(BitVOError):
    """Initialization cannot complete on this frame; retry on a later one."""


class NoOverlap(BitVOError):
    pass


class DegenerateGeometry(BitVOError):
    pass


class DatasetFormatError(BitVOError):
    pass


class ConfigError(BitVOError):
    pass


class InitializationFailed(BitVOError):
    pass
