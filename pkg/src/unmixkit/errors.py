"""Exception hierarchy shared by all unmixkit modules."""


class UnmixError(Exception):
    """Base class for every error raised by unmixkit."""


class DimensionError(UnmixError, ValueError):
    """Operand shapes are incompatible."""


class NotSPDError(UnmixError, ValueError):
    """A matrix handed to a Cholesky solve is not positive definite."""


class DataError(UnmixError):
    """Malformed or inconsistent input data (libraries, ROIs, CSV files)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(UnmixError):
    """Invalid run or solver configuration."""


class SolverError(UnmixError):
    """A solver failed to produce a usable result."""


class NNLSIterationError(SolverError):
    """Lawson-Hanson exceeded its iteration cap.

    The best iterate reached so far is kept on ``best``.
    """

    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


class PValueError(SolverError):
    """t-statistics are undefined because the fit has no residual degrees of freedom."""
