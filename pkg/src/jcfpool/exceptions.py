"""Exception hierarchy shared by every module."""


class JcfError(Exception):
    """Base class for all library errors."""


class ShapeError(JcfError, ValueError):
    """Operand shapes are incompatible."""


class InputError(JcfError, ValueError):
    """An argument or configuration value is invalid."""


class CapacityError(JcfError):
    """A materialized oracle path would exceed its size guard."""


class UnsupportedModeError(JcfError, ValueError):
    """The requested operation is undefined for the given mode."""


class NumericError(JcfError, ArithmeticError):
    """A tensor contains NaN or Inf.

    ``tensor`` names the offending tensor when known.
    """

    def __init__(self, message, tensor=None):
        super().__init__(message)
        self.tensor = tensor
