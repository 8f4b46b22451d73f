from typing import Any, Optional


class GmfgError(Exception):
    """Base error. ``exit_code`` is what the CLI returns when the error escapes a command."""

    exit_code: int = 1

    def __init__(self, detail: str, payload: Optional[dict[str, Any]] = None):
        super().__init__(detail)
        self.detail = detail
        self.payload = payload or {}

    def __str__(self) -> str:
        if not self.payload:
            return self.detail
        extras = ", ".join(f"{key}={value}" for key, value in self.payload.items())
        return f"{self.detail} ({extras})"


# User / configuration errors (exit 1)
class ConfigError(GmfgError):
    exit_code = 1

    def __init__(self, detail: str, line: Optional[int] = None, payload: Optional[dict[str, Any]] = None):
        self.line = line
        if line is not None:
            detail = f"line {line}: {detail}"
        super().__init__(detail, payload)


class CatalogError(GmfgError):
    exit_code = 1


class ContractViolationError(GmfgError):
    exit_code = 1


class NotApplicableError(GmfgError):
    exit_code = 1


class CutNormSizeError(GmfgError):
    exit_code = 1


# Solver did not reach a fixed point (exit 2)
class NonConvergenceError(GmfgError):
    exit_code = 2


class OscillationError(NonConvergenceError):
    """Residuals keep growing even after the damping schedule has been decayed."""


# Numerical failures (exit 3)
class NumericalBlowUpError(GmfgError):
    exit_code = 3


class SchemeViolationError(NumericalBlowUpError):
    pass


class NondegeneracyError(GmfgError):
    exit_code = 3


class MaximizerAmbiguityError(GmfgError):
    exit_code = 3


class DomainTooSmallError(GmfgError):
    exit_code = 3
