"""
Base Validation Framework

Shared result type and validator interface for everything that checks a
run before or after it executes: configuration files against their schema
and stochastic results against exact references.

Score vs is_valid:
- score (0-100) is a quality metric for reporting, NOT a gate
- is_valid is the gate; it depends on the error list and the level
- a config with warnings (e.g. t_final above the time bound) scores lower
  but still runs unless the level is STRICT

数据契约说明：
- 所有validator必须返回标准的ValidationResult
- metadata必须包含validator_type与schema/参考信息
"""

from abc import ABC, abstractmethod
from enum import Enum
from dataclasses import dataclass, field
from typing import Dict, List, Any

from config import Config


class ValidationLevel(Enum):
    """Validation strictness levels"""
    STRICT = "strict"        # warnings fail too
    STANDARD = "standard"    # errors fail
    LENIENT = "lenient"      # unknown keys downgraded to warnings


@dataclass
class ValidationResult:
    """Standardized validation result structure"""
    is_valid: bool
    validation_level: ValidationLevel
    score: float  # 0-100 score
    errors: List[str]
    warnings: List[str]
    summary: str
    validator_type: str = "unknown"
    details: Dict[str, Any] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'is_valid': self.is_valid,
            'validation_level': self.validation_level.value,
            'score': self.score,
            'errors': list(self.errors),
            'warnings': list(self.warnings),
            'summary': self.summary,
            'validator_type': self.validator_type,
            'metadata': self.metadata,
        }


class BaseValidator(ABC):
    """
    Abstract base class for all validators.

    Subclasses collect errors and warnings; scoring, the validity decision
    and the summary line are shared.
    """

    def __init__(self, config: Dict[str, Any] = None):
        self.config = config or {}
        self.validator_type = self.__class__.__name__

    @abstractmethod
    def validate(self, target: Any, validation_level: ValidationLevel = ValidationLevel.STANDARD) -> ValidationResult:
        """
        Perform validation on the target

        Args:
            target: Object or path to validate
            validation_level: Strictness level for validation

        Returns:
            ValidationResult: Complete validation results
        """

    def calculate_score(self, errors: List[str], warnings: List[str]) -> float:
        """Score from 0.0 to 100.0; weights may be overridden per validator."""
        error_weight = self.config.get('error_weight', Config.VALIDATION_ERROR_WEIGHT)
        warning_weight = self.config.get('warning_weight', Config.VALIDATION_WARNING_WEIGHT)
        penalty = len(errors) * error_weight + len(warnings) * warning_weight
        return max(0.0, 100.0 - penalty)

    def determine_validity(self, validation_level: ValidationLevel, errors: List[str],
                           warnings: List[str]) -> bool:
        if validation_level == ValidationLevel.STRICT:
            return not errors and not warnings
        return not errors

    def build_result(self, validation_level: ValidationLevel, errors: List[str], warnings: List[str],
                     details: Dict[str, Any] = None, metadata: Dict[str, Any] = None) -> ValidationResult:
        score = self.calculate_score(errors, warnings)
        is_valid = self.determine_validity(validation_level, errors, warnings)
        return ValidationResult(
            is_valid=is_valid,
            validation_level=validation_level,
            score=score,
            errors=errors,
            warnings=warnings,
            summary=self.generate_summary(is_valid, score, len(errors), len(warnings)),
            validator_type=self.validator_type,
            details=details or {},
            metadata=metadata or {},
        )

    def generate_summary(self, is_valid: bool, score: float,
                         error_count: int, warning_count: int) -> str:
        status = "PASS" if is_valid else "FAIL"
        return f"Validation {status} - Score: {score:.1f}/100, Errors: {error_count}, Warnings: {warning_count}"
