"""Exception types shared across the package."""

from __future__ import annotations


class SketchKFError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SketchKFError, ValueError):
    """Invalid model, method or experiment configuration."""


class ContractError(SketchKFError, ValueError):
    """An operation was called with inputs violating its precondition."""


class NumericalError(SketchKFError, ArithmeticError):
    """A factorization or solve failed.

    Carries the slot index (and optionally the method) so that experiment
    drivers can report where a run broke down.
    """

    def __init__(self, message: str, slot: int | None = None, method: str | None = None):
        self.detail = message
        self.slot = slot
        self.method = method
        where = []
        if method is not None:
            where.append(f"method={method}")
        if slot is not None:
            where.append(f"slot={slot}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
