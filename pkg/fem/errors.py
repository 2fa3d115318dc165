# errors.py
from typing import List, Optional


class PBilapError(Exception):
    """Base class for every error raised by the fem package."""


class InvalidArgumentError(PBilapError, ValueError):
    pass


class PreconditionError(PBilapError, ValueError):
    pass


class DiagnosticError(PBilapError, ValueError):
    pass


class SolverError(PBilapError, RuntimeError):
    def __init__(self, msg: str, pivot: Optional[int] = None):
        super().__init__(msg if pivot is None else f"{msg} (pivot {pivot})")
        self.pivot = pivot


class ContinuationError(PBilapError, RuntimeError):
    """Raised when p-bisection is exhausted; `partial` holds the converged steps."""

    def __init__(self, msg: str, partial: Optional[List] = None):
        super().__init__(msg)
        self.partial = list(partial or [])
