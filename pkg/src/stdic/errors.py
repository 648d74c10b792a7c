"""Exception hierarchy shared by all stdic modules."""


class StdicError(Exception):
    """Base class for every error raised by the library."""


class DimensionTooSmall(StdicError):
    pass


class OutOfDomain(StdicError):
    """A sample point falls outside the interpolant's valid interior."""


class UnsupportedSpec(StdicError):
    """The shape function has no warp-matrix embedding."""


class SingularWarp(StdicError):
    pass


class Singular(StdicError):
    """Normal equations are numerically singular."""


class LengthMismatch(StdicError):
    pass


class FlatSubset(StdicError):
    """Subset intensities are too uniform to normalise."""


class WindowOutOfRange(StdicError):
    pass


class MotionTooLarge(StdicError):
    pass


class NoConvergedPoints(StdicError):
    pass


class EmptyAfterFilter(StdicError):
    pass


class SpecLacksGradients(StdicError):
    pass


class DegenerateAbscissa(StdicError):
    pass


class ConfigError(StdicError):
    """Invalid or unreadable experiment configuration."""
