"""Exception hierarchy.

Every error raised on purpose by the package derives from ``RareClustersError``
so the CLI can map it onto an exit code.
"""


class RareClustersError(Exception):
    exit_code = 1


class ConfigError(RareClustersError, ValueError):
    exit_code = 2


class DomainError(RareClustersError, ValueError):
    """Argument outside the domain of a map or observable."""

    exit_code = 2


class UnsupportedExampleError(RareClustersError, ValueError):
    exit_code = 2


class GeometryError(RareClustersError, ValueError):
    """Exceedance intervals overlap or cross a branch cut."""

    exit_code = 4


class InsufficientDataError(RareClustersError):
    exit_code = 3


class CalibrationError(InsufficientDataError):
    pass


class SelectionError(InsufficientDataError):
    """No run length passed the return-time growth criterion."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NumericError(RareClustersError, ArithmeticError):
    exit_code = 4
