"""Exception hierarchy.  Each class maps onto a CLI exit code."""


class CfrcastError(Exception):
    exit_code = 3


class ConfigError(CfrcastError, ValueError):
    """Invalid configuration or usage."""

    exit_code = 1


class GeometryError(CfrcastError, ValueError):
    exit_code = 3


class DataError(CfrcastError, ValueError):
    """Input data unusable: too short, degenerate, mismatched shapes."""

    exit_code = 2


class InsufficientDataError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class FormatError(DataError):
    """Corrupt or incompatible binary file."""


class ShapeError(DataError):
    pass


class NumericalError(CfrcastError, ArithmeticError):
    exit_code = 3
