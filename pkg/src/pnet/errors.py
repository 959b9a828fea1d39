"""Exception hierarchy shared by every pnet module."""


class PNetError(Exception):
    """Base class for all pnet failures."""


class ShapeError(PNetError, ValueError):
    """A tensor has the wrong shape.

    ``dim`` names the offending dimension (e.g. ``"in_channels"``, ``"height"``).
    """

    def __init__(self, message: str, dim: str | None = None):
        super().__init__(message)
        self.dim = dim


class ConfigError(PNetError, ValueError):
    pass


class DataError(PNetError):
    """Dataset scanning, decoding or splitting failed."""


class NumericError(PNetError, ArithmeticError):
    """Training produced a non-finite value."""


class CheckpointError(PNetError):
    pass
