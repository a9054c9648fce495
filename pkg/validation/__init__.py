"""
Validation Module

Two independent checks:

- run configuration files against data_schemas/run_config_schema.yaml
- positive-P moments against exact few-mode evolution
"""

from .base import ValidationResult, ValidationLevel
from .config_validator import RunConfigValidator
from .oracle import ExactMoments, FewModeSystem, evolve_exact
from .positive_p_check import ComparisonReport, compare_positive_p, report_from_samples

from utils.logger import get_logger
logger = get_logger(__name__)


def validate_run_config(raw: dict, validation_level: ValidationLevel = ValidationLevel.STANDARD) -> ValidationResult:
    """
    Validate a raw run configuration mapping.

    Args:
        raw: Mapping as loaded from a YAML run config
        validation_level: Validation strictness level

    Returns:
        ValidationResult: errors, warnings and score
    """
    validator = RunConfigValidator()
    result = validator.validate(raw, validation_level)
    logger.info(f"Run config validation completed: {result.summary}")
    return result


__all__ = [
    'validate_run_config',
    'RunConfigValidator',
    'FewModeSystem',
    'ExactMoments',
    'evolve_exact',
    'ComparisonReport',
    'compare_positive_p',
    'report_from_samples',
    'ValidationResult',
    'ValidationLevel',
]
