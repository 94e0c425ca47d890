"""Exception hierarchy shared by all spinecurve modules."""


class SpineCurveError(ValueError):
    """Base class for every error raised by this package."""


class FormatError(SpineCurveError):
    """A file could not be parsed under its declared format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class StructureError(SpineCurveError):
    """Parsed data has inconsistent dimensions or channel layout."""


class EmptyScanError(SpineCurveError):
    pass


class SupportError(SpineCurveError):
    """A curve does not cover the rows an operation needs."""


class DegenerateError(SpineCurveError):
    """Geometry collapsed (coincident points, zero areas, ...)."""


class DomainError(SpineCurveError):
    pass


class NumericError(SpineCurveError):
    """A non-finite value appeared during a computation."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class DivergenceError(SpineCurveError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
