"""
Exception hierarchy for diffcp.

Every error raised by the library derives from DiffcpError so callers can
catch the whole family. The CLI maps families to exit codes via
exit_code_for().
"""

from typing import Optional


class DiffcpError(Exception):
    """Base class for all diffcp errors."""


# ==================================================
# CONFIG (exit code 1)
# ==================================================
class ConfigError(DiffcpError, ValueError):
    """Invalid configuration, experiment spec or command-line arguments."""


# ==================================================
# DATA (exit code 2)
# ==================================================
class DataError(DiffcpError, ValueError):
    """Input data cannot be used: malformed file, NaN, wrong shape."""

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class DimensionError(DataError):
    pass


class ParameterBoxError(DataError):
    pass


class WindowTooShortError(DataError):
    pass


# ==================================================
# NUMERICAL (exit code 3)
# ==================================================
class NumericalError(DiffcpError, ArithmeticError):
    """A computation failed numerically."""


class SingularMatrixError(NumericalError):
    def __init__(self, message: str, index: Optional[int] = None):
        if index is not None:
            message = f"{message} at observation index {index}"
        super().__init__(message)
        self.index = index


class ExplosionError(NumericalError):
    def __init__(self, index: int):
        super().__init__(f"non-finite state at observation index {index}")
        self.index = index


class BoundaryHitError(NumericalError):
    pass


# ==================================================
# FLOW CONTROL
# ==================================================
class NoChangeDetectedError(DiffcpError):
    """Raised when the interval-expansion search finds no rejecting split."""


class PipelineStepError(DiffcpError):
    def __init__(self, step: str, cause: Exception):
        super().__init__(f"{step}: {cause}")
        self.step = step
        self.cause = cause


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, PipelineStepError):
        return exit_code_for(exc.cause)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_NUMERICAL
