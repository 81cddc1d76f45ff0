"""Exception hierarchy. Each class maps onto one CLI exit code."""

from __future__ import annotations


class PlannerError(Exception):
    exit_code = 1


class InputError(PlannerError, ValueError):
    """Malformed or invalid input data or parameters."""

    exit_code = 2

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(PlannerError):
    exit_code = 3


class InfeasibleError(NumericalError):
    """Target marginals cannot be met by the kernel's support."""


class ConvergenceError(NumericalError):
    """Sinkhorn scaling did not reach the tolerance.

    ``diagnostic`` carries the last marginal violation and iteration count.
    """

    def __init__(self, message: str, diagnostic: dict | None = None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class VerificationError(PlannerError):
    exit_code = 4
