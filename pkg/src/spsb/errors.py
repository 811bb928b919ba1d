"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each class carries its own.
"""


class SPSBError(Exception):
    exit_code = 1


class ConfigurationError(SPSBError, ValueError):
    """Invalid configuration value or out-of-range argument."""

    exit_code = 1


class InvariantViolation(SPSBError, ValueError):
    """Shapes, bindings or dimensions that break a data-structure invariant."""

    exit_code = 1


class UsageError(SPSBError, RuntimeError):
    exit_code = 1


class DataError(SPSBError, ValueError):
    """Malformed or insufficient input data."""

    exit_code = 2


class NumericalAbort(SPSBError, FloatingPointError):
    """Training produced a non-finite loss."""

    exit_code = 3

    def __init__(self, message: str, record: dict | None = None):
        super().__init__(message)
        self.record = record or {}
