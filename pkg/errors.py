"""Exception hierarchy shared by every stage.

Each top-level class maps to a CLI exit code (see ``main.py``).
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence


class AnalyticsError(Exception):
    """Base class for all errors raised by the analysis pipeline."""

    exit_code = 1

    def to_dict(self) -> Dict[str, Any]:
        return {"type": self.__class__.__name__, "message": str(self)}


class ConfigError(AnalyticsError, ValueError):
    exit_code = 2


class DataError(AnalyticsError):
    exit_code = 3


class NumericalError(AnalyticsError):
    exit_code = 4


class InvalidGeometryError(DataError, ValueError):
    """Raised for degenerate rings, repeated vertices or non-finite coordinates."""


class EmptyInputError(DataError, ValueError):
    pass


class SchemaError(DataError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ContractViolationError(AnalyticsError, ValueError):
    """Raised when a caller breaks an operation precondition."""

    exit_code = 3


class SingularDesignError(NumericalError):
    def __init__(self, message: str, dependent_columns: Sequence[str] = ()) -> None:
        super().__init__(message)
        self.dependent_columns: List[str] = list(dependent_columns)

    def to_dict(self) -> Dict[str, Any]:
        out = super().to_dict()
        out["dependent_columns"] = self.dependent_columns
        return out


class ConvergenceError(NumericalError):
    def __init__(
        self,
        message: str,
        last_iterate: Optional[Any] = None,
        diagnostics: Optional[Dict[str, Any]] = None,
    ) -> None:
        super().__init__(message)
        self.last_iterate = last_iterate
        self.diagnostics = diagnostics or {}

    def to_dict(self) -> Dict[str, Any]:
        out = super().to_dict()
        out["diagnostics"] = {k: float(v) if isinstance(v, (int, float)) else str(v) for k, v in self.diagnostics.items()}
        return out


class DegenerateDataError(NumericalError):
    pass
