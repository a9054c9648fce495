"""
Run Configuration Validator

Checks a raw run configuration (the parsed YAML mapping) against
data_schemas/run_config_schema.yaml and fills in defaults.
"""

import os
from copy import deepcopy
from numbers import Integral, Real
from typing import Any, Dict, List, Optional

import yaml

from config import Config
from .base import BaseValidator, ValidationLevel, ValidationResult
from utils.error_formatter import ConfigError
from utils.logger import get_logger

logger = get_logger(__name__)

SCHEMA_FILE = 'run_config_schema.yaml'


def _is_float(value) -> bool:
    # ints are Real too
    return isinstance(value, Real) and not isinstance(value, bool)


def _is_int(value) -> bool:
    return isinstance(value, Integral) and not isinstance(value, bool)


_SCALAR_CHECKS = {
    'float': _is_float,
    'int': _is_int,
    'bool': lambda v: isinstance(v, bool),
    'str': lambda v: isinstance(v, str),
}


class RunConfigValidator(BaseValidator):
    """
    Validator for run configurations.

    Unknown sections and keys are errors (warnings under LENIENT); wrong
    types and out-of-range values are always errors.
    """

    def __init__(self, schema_file: Optional[str] = None):
        super().__init__()
        self.schema_file = schema_file or os.path.join(Config.SCHEMA_DIR, SCHEMA_FILE)
        self.schema = self.load_schema()

    def load_schema(self) -> Dict[str, Any]:
        if not os.path.exists(self.schema_file):
            raise ConfigError(f"Schema file not found: {self.schema_file}")
        try:
            with open(self.schema_file, 'r', encoding='utf-8') as f:
                schema = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Failed to parse schema: {e}")
        logger.debug(f"Loaded schema: {schema.get('schema_name')} v{schema.get('schema_version')}")
        return schema

    @property
    def sections(self) -> Dict[str, Dict[str, Any]]:
        return self.schema['sections']

    def defaults(self) -> Dict[str, Any]:
        """Fully populated config from schema defaults."""
        out = {key: deepcopy(spec.get('default')) for key, spec in self.schema['top_level'].items()}
        for section, keys in self.sections.items():
            out[section] = {key: deepcopy(spec.get('default')) for key, spec in keys.items()}
        return out

    def resolve(self, raw: Dict[str, Any]) -> Dict[str, Any]:
        """Defaults overlaid with the keys present in `raw` (which should already validate)."""
        resolved = self.defaults()
        for key, value in raw.items():
            if isinstance(value, dict) and isinstance(resolved.get(key), dict):
                resolved[key].update(deepcopy(value))
            else:
                resolved[key] = deepcopy(value)
        return resolved

    def validate(self, target: Dict[str, Any],
                 validation_level: ValidationLevel = ValidationLevel.STANDARD) -> ValidationResult:
        errors: List[str] = []
        warnings: List[str] = []
        unknown = warnings if validation_level == ValidationLevel.LENIENT else errors

        if not isinstance(target, dict):
            errors.append(f"Run config must be a mapping, got {type(target).__name__}")
            return self.build_result(validation_level, errors, warnings)

        top_level = self.schema['top_level']
        for key, value in target.items():
            if key in top_level:
                self._check_value(key, value, top_level[key], errors)
            elif key in self.sections:
                if not isinstance(value, dict):
                    errors.append(f"{key}: section must be a mapping")
                    continue
                for sub, sub_value in value.items():
                    spec = self.sections[key].get(sub)
                    if spec is None:
                        unknown.append(f"{key}.{sub}: unknown key")
                    else:
                        self._check_value(f"{key}.{sub}", sub_value, spec, errors)
            else:
                unknown.append(f"{key}: unknown section")

        if not errors:
            self._check_consistency(self.resolve(target), errors, warnings)

        return self.build_result(validation_level, errors, warnings,
                                 metadata={'schema_version': self.schema.get('schema_version', 'unknown')})

    def _check_value(self, name: str, value: Any, spec: Dict[str, Any], errors: List[str]):
        if value is None:
            if not spec.get('nullable', False):
                errors.append(f"{name}: value required")
            return

        kind = spec['type']
        if kind.endswith('_list'):
            element = kind[:-len('_list')]
            if not isinstance(value, list):
                errors.append(f"{name}: expected a list of {element}")
                return
            if 'length' in spec and len(value) != spec['length']:
                errors.append(f"{name}: expected {spec['length']} entries, got {len(value)}")
            if not value:
                errors.append(f"{name}: list must not be empty")
            items = value
        else:
            element = kind
            items = [value]

        check = _SCALAR_CHECKS[element]
        for item in items:
            if not check(item):
                errors.append(f"{name}: expected {element}, got {item!r}")
                return
            if 'choices' in spec and item not in spec['choices']:
                errors.append(f"{name}: {item!r} not in {spec['choices']}")
            if element in ('float', 'int'):
                if spec.get('positive') and not item > 0:
                    errors.append(f"{name}: must be positive, got {item}")
                if 'min' in spec and item < spec['min']:
                    errors.append(f"{name}: must be >= {spec['min']}, got {item}")
                if 'max' in spec and item > spec['max']:
                    errors.append(f"{name}: must be <= {spec['max']}, got {item}")

    def _check_consistency(self, resolved: Dict[str, Any], errors: List[str], warnings: List[str]):
        physical = resolved['physical']
        if (physical['peak_density'] is None) == (physical['atom_number'] is None):
            errors.append("physical: exactly one of peak_density / atom_number must be set")

        points = resolved['lattice']['points']
        if resolved['kind'] == 'collision' and any(n < 2 for n in points):
            errors.append("lattice.points: every axis needs at least two points")

        integration = resolved['integration']
        steps = integration['steps']
        for fraction in integration['sample_fractions']:
            if abs(fraction * steps - round(fraction * steps)) > 1e-9:
                warnings.append(f"integration.sample_fractions: {fraction} x {steps} steps "
                                f"is rounded to step {round(fraction * steps)}")

        low, high = resolved['analysis']['halo_fit_range']
        if not low < 1.0 < high:
            errors.append("analysis.halo_fit_range must bracket k_r")

        fewmode = resolved['fewmode']
        per_unit = fewmode['steps_per_gbar_time']
        for g in fewmode['gbar_times']:
            if abs(g * per_unit - round(g * per_unit)) > 1e-9:
                errors.append(f"fewmode.gbar_times: {g} is not a whole number of steps")
