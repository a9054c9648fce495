"""Tests for run checkpoints and the report writer"""

import json
import os

import numpy as np
import pytest

from analysis.observables import MomentPlan
from processors.report_writer import ReportWriter
from simulation.checkpoint import (
    load_field_snapshot, load_ground_state, load_moments, read_manifest, save_field_snapshot,
    save_ground_state, save_moments,
)
from simulation.dynamics import SimConfig, initialize_collision
from simulation.ensemble import simulate_ensemble
from simulation.groundstate import GroundState
from simulation.lattice import build_lattice
from utils.error_formatter import CheckpointError

RHO = 1e19
HASH = 'ab' * 32


@pytest.fixture
def lattice():
    return build_lattice((64, 4, 4), (8e-6, 4e-6, 4e-6))


@pytest.fixture
def ground(he_params, lattice):
    return GroundState(density=np.full(lattice.shape, RHO), mu=1e-30, atom_number=RHO * lattice.volume,
                       energy=2e-30, lattice=lattice, params=he_params, sigma_x=1e4, sigma_yz=3e5,
                       residual=1e-4, iterations=17)


@pytest.fixture
def plan(he_params, lattice):
    return MomentPlan(lattice, he_params.k_r, lag_bins=(2, 1, 1))


@pytest.fixture
def moments(he_params, lattice, plan, ground):
    config = SimConfig(he_params, lattice, t_final=1e-6, n_steps=4, n_trajectories=4, base_seed=9)
    return simulate_ensemble(config, initialize_collision(ground), plan, workers=1, progress=False)


class TestGroundStateCheckpoint:
    """Density snapshot with sidecar metadata"""

    def test_restores_state(self, ground, tmp_path):
        save_ground_state(ground, str(tmp_path))
        restored = load_ground_state(str(tmp_path))

        assert np.array_equal(restored.density, ground.density)
        assert restored.params == ground.params
        assert restored.lattice.shape == ground.lattice.shape
        assert restored.iterations == 17
        assert restored.sigma_yz == pytest.approx(3e5)

    def test_detects_corruption(self, ground, tmp_path):
        path = save_ground_state(ground, str(tmp_path))
        with open(path, 'r+b') as f:
            f.seek(8)
            f.write(b'\x00' * 8)
        with pytest.raises(CheckpointError):
            load_ground_state(str(tmp_path))

    def test_missing_metadata(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_ground_state(str(tmp_path))


class TestMomentsCheckpoint:
    """Accumulators and the resume manifest"""

    def test_restores_accumulators(self, moments, plan, tmp_path):
        save_moments(moments, str(tmp_path), HASH, 9)
        restored = load_moments(str(tmp_path), plan, HASH)

        assert restored.count == moments.count
        assert restored.trajectory_ids == moments.trajectory_ids
        assert np.allclose(restored.sample_times, moments.sample_times)
        assert np.array_equal(restored.density_sum, moments.density_sum)
        assert np.array_equal(restored.totals, moments.totals)
        assert np.array_equal(restored.bb[0], moments.bb[0])

    def test_manifest_records_run(self, moments, tmp_path):
        save_moments(moments, str(tmp_path), HASH, 9)
        manifest = read_manifest(str(tmp_path))
        assert manifest['config_hash'] == HASH
        assert manifest['seed'] == 9
        assert manifest['completed_ids'] == [0, 1, 2, 3]

    def test_rejects_other_configuration(self, moments, plan, tmp_path):
        save_moments(moments, str(tmp_path), HASH, 9)
        with pytest.raises(CheckpointError):
            load_moments(str(tmp_path), plan, 'cd' * 32)

    def test_rejects_other_plan(self, moments, he_params, lattice, tmp_path):
        save_moments(moments, str(tmp_path), HASH, 9)
        wider = MomentPlan(lattice, he_params.k_r, lag_bins=(3, 1, 1))
        with pytest.raises(CheckpointError):
            load_moments(str(tmp_path), wider, HASH)

    def test_detects_tampering(self, moments, plan, tmp_path):
        save_moments(moments, str(tmp_path), HASH, 9)
        moments.density_sum += 1.0
        np.savez(os.path.join(str(tmp_path), 'moments.npz'), density_sum=moments.density_sum)
        with pytest.raises(CheckpointError):
            load_moments(str(tmp_path), plan, HASH)


class TestFieldSnapshot:
    """Per-trajectory field dumps"""

    def test_restores_fields(self, ground, tmp_path):
        pair = initialize_collision(ground)
        path = save_field_snapshot(pair, str(tmp_path), HASH, 9)
        assert os.path.getsize(path) == 2 * pair.psi.values.size * 16

        restored = load_field_snapshot(str(tmp_path), pair.trajectory_id)
        assert np.array_equal(restored.psi.values, pair.psi.values)
        assert np.array_equal(restored.psi_tilde.values, pair.psi_tilde.values)
        assert restored.psi.space == pair.psi.space


class TestReportWriter:
    """Headers, JSON cleaning and format selection"""

    def test_csv_header_and_columns(self, tmp_path):
        writer = ReportWriter(str(tmp_path), HASH, 9)
        writer.write_csv('profiles/example.csv', {'x': [0.0, 1.0], 'y': [2.0, 3.0]}, ['t=1 s'])
        lines = (tmp_path / 'profiles' / 'example.csv').read_text().splitlines()

        assert lines[0] == f"# config_hash={HASH} seed=9"
        assert lines[1] == '# t=1 s'
        assert lines[2] == 'x,y'
        assert lines[3] == '0,2'
        assert writer.written == ['profiles/example.csv']

    def test_json_carries_hash_and_cleans_values(self, tmp_path):
        writer = ReportWriter(str(tmp_path), HASH, 9)
        writer.summary({'value': np.float64(np.nan), 'count': np.int64(3),
                        'array': np.arange(2), 'flag': np.bool_(True)})
        document = json.loads((tmp_path / 'summary.json').read_text())

        assert document['config_hash'] == HASH
        assert document['seed'] == 9
        assert document['value'] is None
        assert document['count'] == 3
        assert document['array'] == [0, 1]
        assert document['flag'] is True

    def test_formats_filter_outputs(self, tmp_path):
        writer = ReportWriter(str(tmp_path), HASH, 9, formats=('json',))
        assert writer.write_csv('a.csv', {'x': [1.0]}) is None
        assert writer.write_gnuplot('a.gp', ['plot x']) is None
        # config and summary are written whatever the formats
        writer.config({'kind': 'collision'})
        assert (tmp_path / 'config.json').exists()
