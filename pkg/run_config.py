"""
Run configuration: loading, schema validation, hashing and presets.

A RunConfig is always fully resolved (schema defaults filled in) so that
its hash identifies every input of a run.
"""

import hashlib
import json
import os
from copy import deepcopy
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import yaml

from analysis.observables import MomentPlan
from config import Config
from simulation.dynamics import SimConfig
from simulation.groundstate import HELIUM4_MASS, PhysicalParams
from simulation.lattice import Lattice3D, build_lattice
from utils.error_formatter import ConfigError
from utils.logger import get_logger
from validation.base import ValidationLevel
from validation.config_validator import RunConfigValidator
from validation.oracle import FewModeSystem

logger = get_logger(__name__)

PRESETS_FILE = 'scenario_presets.yaml'


def config_hash(resolved: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form."""
    canonical = json.dumps(resolved, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class RunConfig:
    data: Dict[str, Any]
    config_hash: str
    source: Optional[str] = None

    def section(self, name: str) -> Dict[str, Any]:
        return self.data[name]

    @property
    def kind(self) -> str:
        return self.data['kind']

    @property
    def preset(self) -> Optional[str]:
        return self.data.get('preset')

    @property
    def scaling_note(self) -> str:
        return self.data.get('scaling_note', '')

    @property
    def seed(self) -> int:
        if self.kind == 'fewmode':
            return int(self.data['fewmode']['base_seed'])
        return int(self.data['integration']['base_seed'])

    @property
    def short_hash(self) -> str:
        return self.config_hash[:8]

    def physical_params(self) -> PhysicalParams:
        section = dict(self.data['physical'])
        if section.get('mass') is None:
            section['mass'] = HELIUM4_MASS
        return PhysicalParams.from_section(section)

    def lattice(self) -> Lattice3D:
        section = self.data['lattice']
        return build_lattice(section['points'], section['box_lengths'])

    def solver_options(self) -> Dict[str, Any]:
        section = self.data['groundstate']
        return {
            'tolerance': section['tolerance'],
            'max_iterations': section['max_iterations'],
            'residual_tolerance': section['residual_tolerance'],
            'time_step': section['time_step'],
            'refinement_stages': section['refinement_stages'],
        }

    def sim_config(self, params: Optional[PhysicalParams] = None, lattice: Optional[Lattice3D] = None,
                   reference_density: Optional[float] = None) -> SimConfig:
        section = self.data['integration']
        options = {}
        if section['divergence_factor'] is not None:
            options['divergence_factor'] = section['divergence_factor']
        return SimConfig(
            params=params or self.physical_params(),
            lattice=lattice or self.lattice(),
            t_final=section['t_final'],
            n_steps=section['steps'],
            n_trajectories=section['trajectories'],
            base_seed=section['base_seed'],
            noise=section['noise'],
            sample_fractions=section['sample_fractions'],
            reference_density=reference_density,
            **options,
        )

    def moment_plan(self, lattice: Optional[Lattice3D] = None, k_r: Optional[float] = None) -> MomentPlan:
        section = self.data['analysis']
        return MomentPlan(
            lattice=lattice or self.lattice(),
            k_r=k_r or self.physical_params().k_r,
            scattered_exclusion=section['scattered_exclusion'],
            axial_mask=section['axial_mask'],
            shell=section['shell'],
            lag_bins=tuple(section['lag_bins']),
        )

    def fewmode_systems(self) -> List[FewModeSystem]:
        section = self.data['fewmode']
        return [FewModeSystem.four_wave_mixing(
            modes=m,
            pump_occupation=section['pump_occupation'],
            gbar=section['gbar'],
            detuning=section['detuning'],
            off_resonant_detuning=section['off_resonant_detuning'],
            signal_cutoff=section['signal_cutoff'],
        ) for m in section['modes']]

    def output_directory(self) -> str:
        directory = self.data['outputs']['directory']
        if directory:
            return directory
        label = self.preset or self.kind
        return os.path.join(Config.OUTPUT_ROOT, f"{label}-{self.short_hash}")

    def with_overrides(self, overrides: Dict[str, Any],
                       level: ValidationLevel = ValidationLevel.STANDARD) -> 'RunConfig':
        merged = deepcopy(self.data)
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key].update(value)
            else:
                merged[key] = value
        return from_mapping(merged, source=self.source, level=level)

    def to_dict(self) -> Dict[str, Any]:
        out = deepcopy(self.data)
        out['config_hash'] = self.config_hash
        out['seed'] = self.seed
        return out


def from_mapping(raw: Dict[str, Any], source: Optional[str] = None,
                 level: ValidationLevel = ValidationLevel.STANDARD) -> RunConfig:
    """
    Validate and resolve a raw mapping.

    Raises:
        ConfigError: listing every schema problem
    """
    validator = RunConfigValidator()
    result = validator.validate(raw, level)
    for warning in result.warnings:
        logger.warning(f"Run config: {warning}")
    if not result.is_valid:
        problems = result.errors + (result.warnings if level == ValidationLevel.STRICT else [])
        raise ConfigError(f"Invalid run config{f' {source}' if source else ''}", problems=problems)

    resolved = validator.resolve(raw)
    # unknown keys tolerated under LENIENT never reach the resolved config
    resolved = {key: value for key, value in resolved.items() if key in validator.defaults()}
    for name, section in validator.sections.items():
        resolved[name] = {key: value for key, value in resolved[name].items() if key in section}
    return RunConfig(resolved, config_hash(resolved), source)


def load_run_config(path: str, level: ValidationLevel = ValidationLevel.STANDARD) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            raw = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Failed to parse config {path}: {e}")
    logger.info(f"Loaded run config: {path}")
    return from_mapping(raw, source=path, level=level)


def _load_presets() -> Dict[str, Dict[str, Any]]:
    path = os.path.join(Config.SCHEMA_DIR, PRESETS_FILE)
    if not os.path.exists(path):
        raise ConfigError(f"Preset file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        return yaml.safe_load(f)['presets']


def list_presets() -> Dict[str, str]:
    """Preset name -> description."""
    return {name: entry.get('description', '') for name, entry in _load_presets().items()}


def preset(name: str) -> RunConfig:
    """
    Run config of a named scenario.

    Raises:
        ConfigError: unknown preset
    """
    presets = _load_presets()
    if name not in presets:
        raise ConfigError(f"Unknown preset: {name}", problems=[f"available: {', '.join(presets)}"])
    entry = presets[name]
    raw = deepcopy(entry.get('config') or {})
    raw['preset'] = name
    raw['scaling_note'] = ' '.join(entry.get('scaling_note', '').split())
    return from_mapping(raw, source=f"preset:{name}")
