"""Exception hierarchy shared across the package."""


class MSANetError(Exception):
    """Base class; ``code`` doubles as the CLI exit status."""

    code = 1


class ShapeError(MSANetError, ValueError):
    code = 3


class NumericError(MSANetError, ArithmeticError):
    code = 4


class UsageError(MSANetError, ValueError):
    code = 2


class DomainError(MSANetError, ValueError):
    code = 5


class ConfigError(MSANetError, ValueError):
    code = 6


class StructuralError(MSANetError, KeyError):
    code = 7

    def __str__(self):
        return Exception.__str__(self)


class FormatError(MSANetError, ValueError):
    """Malformed file contents (bad magic, truncation, bad header...)."""

    code = 8


class MissingFileError(MSANetError, FileNotFoundError):
    code = 9


class DimensionMismatchError(FormatError):
    code = 10


class InvariantError(MSANetError, ValueError):
    code = 11
