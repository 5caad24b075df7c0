"""
Exception hierarchy for the citest package.

Everything the package raises on purpose derives from CITestError so callers
(the CLI, the simulation harness) can catch package failures in one place.
"""
from typing import Optional

import numpy as np


class CITestError(Exception):
    """Base exception for citest errors."""
    error_code = "CITEST_ERROR"


class InvalidInputError(CITestError, ValueError):
    """Raised when an operation receives inputs outside its contract."""
    error_code = "INVALID_INPUT"


class ConfigError(CITestError, ValueError):
    """Raised when a run configuration fails validation."""
    error_code = "CONFIG_ERROR"


class DataFileError(InvalidInputError):
    """Raised when a delimited data file cannot be turned into a sample."""
    error_code = "DATA_FILE_ERROR"

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class DegenerateResponseError(CITestError):
    """Raised when a binary response has no variation (all 0 or all 1)."""
    error_code = "DEGENERATE_RESPONSE"


class NonConvergenceError(CITestError):
    """Raised when an iterative fit stops before meeting its tolerance."""
    error_code = "NON_CONVERGENCE"

    def __init__(self, message: str, last_iterate: np.ndarray, iterations: int):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class InvariantViolationError(CITestError):
    """Raised when an internal invariant no longer holds."""
    error_code = "INVARIANT_VIOLATION"


class DegenerateKernelWarning(UserWarning):
    """Kernel weights summed to zero and uniform weights were used instead."""
