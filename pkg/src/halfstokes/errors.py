"""Exception types raised across the package."""


class HalfStokesError(Exception):
    """Base class for all package errors."""


class InvalidSpec(HalfStokesError, ValueError):
    pass


class FormatError(HalfStokesError, ValueError):
    pass


class GridMismatch(HalfStokesError, ValueError):
    pass


class SymbolSingularity(HalfStokesError, ArithmeticError):
    pass


class NegativeTime(HalfStokesError, ValueError):
    pass


class OrderOutOfRange(HalfStokesError, ValueError):
    pass


class UnsupportedSignal(HalfStokesError, ValueError):
    pass


class BandTooNarrow(HalfStokesError, ValueError):
    pass


class NotDivergenceFree(HalfStokesError, ValueError):
    pass


class NonzeroTrace(HalfStokesError, ValueError):
    pass


class InadmissibleExponents(HalfStokesError, ValueError):
    pass


class DegenerateInput(HalfStokesError, ValueError):
    pass


class ConfigError(HalfStokesError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
