"""
Unified Error Formatting System

Error vocabulary shared by the simulation, analysis and validation packages.
Every failure that leaves a module is a SimulationError subclass carrying a
category; the CLI maps categories to exit codes and nothing else inspects
exception types by name.
"""

from typing import List, Dict, Any, Optional
from enum import Enum


class ErrorSeverity(Enum):
    """Standardized error severity levels"""
    CRITICAL = "CRITICAL"
    ERROR = "ERROR"
    WARNING = "WARNING"
    INFO = "INFO"


class ErrorCategory(Enum):
    """Standardized error categories"""
    CONFIGURATION = "CONFIGURATION"
    LATTICE = "LATTICE"
    CONVERGENCE = "CONVERGENCE"
    DIVERGENCE = "DIVERGENCE"
    FIT = "FIT"
    CHECKPOINT = "CHECKPOINT"
    ORACLE = "ORACLE"
    VALIDATION = "VALIDATION"
    SYSTEM_ERROR = "SYSTEM_ERROR"


# CLI 退出码
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3
EXIT_VALIDATION_FAILURE = 4

_EXIT_CODES = {
    ErrorCategory.CONFIGURATION: EXIT_CONFIG_ERROR,
    ErrorCategory.LATTICE: EXIT_CONFIG_ERROR,
    ErrorCategory.CONVERGENCE: EXIT_NUMERICAL_FAILURE,
    ErrorCategory.DIVERGENCE: EXIT_NUMERICAL_FAILURE,
    ErrorCategory.FIT: EXIT_NUMERICAL_FAILURE,
    ErrorCategory.ORACLE: EXIT_NUMERICAL_FAILURE,
    ErrorCategory.CHECKPOINT: EXIT_FAILURE,
    ErrorCategory.VALIDATION: EXIT_VALIDATION_FAILURE,
    ErrorCategory.SYSTEM_ERROR: EXIT_FAILURE,
}


class SimulationError(Exception):
    """Base error for everything raised by the simulator packages."""

    category = ErrorCategory.SYSTEM_ERROR
    severity = ErrorSeverity.ERROR

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None,
                 details: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}
        self.details = details

    @property
    def exit_code(self) -> int:
        return _EXIT_CODES.get(self.category, EXIT_FAILURE)

    def to_string(self) -> str:
        """Convert to human-readable string format"""
        parts = [f"[{self.severity.value}]", f"({self.category.value})", self.message]

        if self.context:
            parts.append("Context: " + ", ".join(f"{k}={v}" for k, v in self.context.items()))

        if self.details:
            parts.append(f"Details: {self.details}")

        return " ".join(parts)


class ConfigError(SimulationError):
    category = ErrorCategory.CONFIGURATION

    def __init__(self, message: str, problems: Optional[List[str]] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.problems = problems or []
        if self.problems and not self.details:
            self.details = ErrorFormatter.format_error_list(self.problems, max_errors=10)


class LatticeError(SimulationError):
    category = ErrorCategory.LATTICE


class ConvergenceError(SimulationError):
    category = ErrorCategory.CONVERGENCE


class DivergenceError(SimulationError):
    category = ErrorCategory.DIVERGENCE
    severity = ErrorSeverity.CRITICAL


class FitError(SimulationError):
    category = ErrorCategory.FIT


class CheckpointError(SimulationError):
    category = ErrorCategory.CHECKPOINT


class OracleError(SimulationError):
    category = ErrorCategory.ORACLE


class ValidationFailure(SimulationError):
    category = ErrorCategory.VALIDATION


class ErrorFormatter:
    """Unified message formatter for logs, reports and the CLI"""

    @classmethod
    def format_error_list(cls, errors: List[Any], max_errors: int = 5) -> str:
        """
        Format a list of errors (SimulationError or plain strings) into one line

        Args:
            errors: Errors to format
            max_errors: Maximum number of errors to display

        Returns:
            Formatted error list string
        """
        if not errors:
            return ""

        rendered = [e.to_string() if isinstance(e, SimulationError) else str(e)
                    for e in errors[:max_errors]]
        result = "; ".join(rendered)

        if len(errors) > max_errors:
            remaining = len(errors) - max_errors
            result += f"; ... and {remaining} more error{'s' if remaining != 1 else ''}"

        return result

    @classmethod
    def exit_code_for(cls, error: BaseException) -> int:
        if isinstance(error, SimulationError):
            return error.exit_code
        return EXIT_FAILURE

    @classmethod
    def format_duration_seconds(cls, duration_seconds: float) -> str:
        """
        Format duration from decimal seconds to MM:SS format (sub-second
        durations keep milliseconds)
        """
        if duration_seconds < 0:
            return "00:00"

        if duration_seconds < 1.0:
            return f"{duration_seconds * 1000:.0f}ms"

        total_seconds = int(round(duration_seconds))
        minutes = total_seconds // 60
        seconds = total_seconds % 60

        return f"{minutes:02d}:{seconds:02d}"
