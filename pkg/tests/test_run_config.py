"""Tests for run configuration loading, validation and presets"""

import os

import pytest
import yaml

from config import Config
from run_config import from_mapping, list_presets, load_run_config, preset
from utils.error_formatter import ConfigError
from validation import ValidationLevel, validate_run_config


class TestPresets:
    """Named scenarios"""

    def test_all_presets_listed(self):
        names = set(list_presets())
        assert {'main', 'half-time', 'small-velocity', 'small-a', 'fullscale-appendixD',
                'fewmode-validate'} <= names

    @pytest.mark.parametrize("name", ['main', 'half-time', 'small-velocity', 'small-a',
                                      'fullscale-appendixD', 'fewmode-validate'])
    def test_presets_resolve(self, name):
        run_config = preset(name)
        assert run_config.preset == name
        assert len(run_config.config_hash) == 64
        assert run_config.scaling_note

    def test_main_scenario(self):
        run_config = preset('main')
        params = run_config.physical_params()
        assert params.k_r == pytest.approx(5.8e6, rel=0.01)
        assert run_config.lattice().shape == (256, 36, 36)
        sim = run_config.sim_config()
        assert sim.n_trajectories == 400 and sim.n_steps == 128
        assert sim.t_final == pytest.approx(25e-6)
        assert run_config.section('analysis')['sigma_yz'] == 0.055
        assert run_config.moment_plan().lag_bins == (8, 3, 3)

    def test_variants(self):
        assert preset('half-time').sim_config().dt == pytest.approx(preset('main').sim_config().dt)
        assert preset('small-velocity').physical_params().k_r == pytest.approx(4.1e6, rel=0.01)
        assert preset('small-a').physical_params().a00 == pytest.approx(2.65e-9)
        full = preset('fullscale-appendixD')
        assert full.lattice().shape == (1400, 50, 70)
        assert full.sim_config().n_trajectories == 2800

    def test_fewmode_systems(self):
        systems = preset('fewmode-validate').fewmode_systems()
        assert [s.modes for s in systems] == [2, 4]
        assert all(s.occupations[0] == pytest.approx(10.0) for s in systems)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError) as excinfo:
            preset('no-such-scenario')
        assert 'main' in excinfo.value.details


class TestHashing:
    """Config hash identifies every input"""

    def test_hash_stable(self):
        assert preset('main').config_hash == preset('main').config_hash

    def test_overrides_change_hash(self):
        base = preset('main')
        changed = base.with_overrides({'integration': {'trajectories': 8}})
        assert changed.config_hash != base.config_hash
        assert changed.section('integration')['trajectories'] == 8
        assert changed.section('integration')['steps'] == 128

    def test_defaults_are_explicit(self):
        implicit = from_mapping({})
        explicit = from_mapping({'integration': {'steps': 128}})
        assert implicit.config_hash == explicit.config_hash

    def test_to_dict_carries_hash_and_seed(self):
        document = preset('main').to_dict()
        assert document['config_hash'] == preset('main').config_hash
        assert document['seed'] == 20080122

    def test_output_directory(self):
        run_config = preset('main')
        expected = os.path.join(Config.OUTPUT_ROOT, f"main-{run_config.short_hash}")
        assert run_config.output_directory() == expected


class TestValidation:
    """Schema checks"""

    @pytest.mark.parametrize("raw", [
        {'integration': {'steps': 'many'}},
        {'integration': {'trajectories': 1}},
        {'physical': {'atom_number': 1e5}},
        {'lattice': {'points': [16, 8]}},
        {'analysis': {'halo_fit_range': [1.1, 1.4]}},
        {'fewmode': {'gbar_times': [0.3333]}},
        {'kind': 'something'},
        {'integration': {'stepz': 10}},
        {'extras': {}},
    ])
    def test_invalid_configs(self, raw):
        with pytest.raises(ConfigError) as excinfo:
            from_mapping(raw)
        assert excinfo.value.problems

    def test_lenient_drops_unknown_keys(self):
        run_config = from_mapping({'integration': {'stepz': 10}}, level=ValidationLevel.LENIENT)
        assert 'stepz' not in run_config.section('integration')

    def test_rounded_sample_fraction_warns(self):
        result = validate_run_config({'integration': {'sample_fractions': [0.3, 1.0]}})
        assert result.is_valid
        assert any('rounded' in w for w in result.warnings)
        strict = validate_run_config({'integration': {'sample_fractions': [0.3, 1.0]}},
                                     ValidationLevel.STRICT)
        assert not strict.is_valid

    def test_bool_is_not_int(self):
        result = validate_run_config({'integration': {'steps': True}})
        assert not result.is_valid


class TestLoading:
    """YAML files on disk"""

    def test_load_file(self, tmp_path):
        path = tmp_path / 'run.yaml'
        path.write_text(yaml.safe_dump({'integration': {'trajectories': 16, 't_final': 1.0e-6}}))
        run_config = load_run_config(str(path))
        assert run_config.source == str(path)
        assert run_config.sim_config().n_trajectories == 16

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(str(tmp_path / 'absent.yaml'))

    def test_broken_yaml(self, tmp_path):
        path = tmp_path / 'broken.yaml'
        path.write_text("integration: [unclosed\n")
        with pytest.raises(ConfigError):
            load_run_config(str(path))
