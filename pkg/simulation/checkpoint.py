"""
Run checkpoints

Layout under <run>/checkpoints/:
    ground_state.bin / .json     little-endian float64 density + sidecar
    moments.npz / manifest.json  ensemble accumulators + resume manifest
    fields/traj_<id>.bin / .json optional per-trajectory snapshots, float64
                                 (re, im) pairs of Psi then Psi-tilde
"""

import hashlib
import json
import os
from dataclasses import asdict
from datetime import datetime
from typing import Any, Dict, Optional

import numpy as np

from analysis.observables import MomentPlan
from simulation.dynamics import FieldPair
from simulation.ensemble import EnsembleMoments
from simulation.groundstate import GroundState, PhysicalParams
from simulation.lattice import ComplexField, Lattice3D, Space
from utils.error_formatter import CheckpointError
from utils.logger import get_logger

logger = get_logger(__name__)

_ACCUMULATORS = ('density_sum', 'density_sq_real', 'density_sq_imag', 'mismatch_sum',
                 'mismatch_sq_real', 'mismatch_sq_imag', 'psi_sum')


def calculate_sha256(file_path: str) -> str:
    """SHA-256 of a file, read in chunks"""
    digest = hashlib.sha256()
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path: str, data: Dict[str, Any]):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, ensure_ascii=False, indent=2)


def _read_json(path: str) -> Dict[str, Any]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Cannot read checkpoint metadata: {e}", context={'path': path})


def _verify(path: str, expected: str):
    actual = calculate_sha256(path)
    if actual != expected:
        raise CheckpointError("Checkpoint hash mismatch",
                              context={'path': path, 'expected': expected[:12], 'actual': actual[:12]})


# 基态快照

def save_ground_state(state: GroundState, directory: str) -> str:
    os.makedirs(directory, exist_ok=True)
    bin_path = os.path.join(directory, 'ground_state.bin')
    state.density.astype('<f8').tofile(bin_path)
    params = asdict(state.params)
    params['trap_frequencies'] = list(params['trap_frequencies'])
    _write_json(os.path.join(directory, 'ground_state.json'), {
        'lattice': state.lattice.describe(),
        'params': params,
        'mu': state.mu,
        'atom_number': state.atom_number,
        'energy': state.energy,
        'sigma_x': state.sigma_x,
        'sigma_yz': state.sigma_yz,
        'residual': state.residual,
        'iterations': state.iterations,
        'sha256': calculate_sha256(bin_path),
        'written': datetime.now().isoformat(),
    })
    logger.debug(f"Ground state written to {bin_path}")
    return bin_path


def load_ground_state(directory: str) -> GroundState:
    meta = _read_json(os.path.join(directory, 'ground_state.json'))
    bin_path = os.path.join(directory, 'ground_state.bin')
    if not os.path.exists(bin_path):
        raise CheckpointError("Ground-state snapshot missing", context={'path': bin_path})
    _verify(bin_path, meta['sha256'])

    lattice = Lattice3D(tuple(meta['lattice']['points']), tuple(meta['lattice']['box_lengths']))
    density = np.fromfile(bin_path, dtype='<f8')
    if density.size != lattice.n_points:
        raise CheckpointError("Ground-state snapshot size does not match its lattice",
                              context={'values': density.size, 'points': lattice.n_points})
    params = dict(meta['params'])
    params['trap_frequencies'] = tuple(params['trap_frequencies'])
    return GroundState(
        density=density.reshape(lattice.shape),
        mu=meta['mu'],
        atom_number=meta['atom_number'],
        energy=meta['energy'],
        lattice=lattice,
        params=PhysicalParams(**params),
        sigma_x=meta['sigma_x'],
        sigma_yz=meta['sigma_yz'],
        residual=meta['residual'],
        iterations=meta['iterations'],
    )


# 系综矩

def save_moments(moments: EnsembleMoments, directory: str, config_hash: str, seed: int) -> str:
    os.makedirs(directory, exist_ok=True)
    npz_path = os.path.join(directory, 'moments.npz')
    arrays = {name: getattr(moments, name) for name in _ACCUMULATORS}
    arrays.update({
        'count': np.array(moments.count),
        'trajectory_ids': np.asarray(moments.trajectory_ids, dtype=np.int64),
        'totals': moments.totals,
        'scattered': moments.scattered,
        'quadrants': moments.quadrants,
    })
    for axis, values in enumerate(moments.bb):
        arrays[f'bb_{axis}'] = values
    for axis, values in enumerate(moments.cl):
        arrays[f'cl_{axis}'] = values

    tmp_path = npz_path + '.tmp.npz'
    np.savez(tmp_path, **arrays)
    os.replace(tmp_path, npz_path)

    _write_json(os.path.join(directory, 'manifest.json'), {
        'config_hash': config_hash,
        'seed': int(seed),
        'sample_times': list(moments.sample_times),
        'plan': moments.plan.describe(),
        'completed_ids': moments.trajectory_ids,
        'discarded': {str(k): v for k, v in moments.discarded.items()},
        'moments_sha256': calculate_sha256(npz_path),
        'last_updated': datetime.now().isoformat(),
    })
    logger.debug(f"Moments checkpoint: {moments.count} valid, {len(moments.discarded)} discarded")
    return npz_path


def load_moments(directory: str, plan: MomentPlan, config_hash: Optional[str] = None) -> EnsembleMoments:
    """
    Restore accumulated moments. The plan must be the one the run used;
    config_hash, when given, must match the manifest.
    """
    manifest = _read_json(os.path.join(directory, 'manifest.json'))
    if config_hash is not None and manifest['config_hash'] != config_hash:
        raise CheckpointError("Checkpoint belongs to a different configuration",
                              context={'expected': config_hash[:12], 'found': manifest['config_hash'][:12]})
    npz_path = os.path.join(directory, 'moments.npz')
    if not os.path.exists(npz_path):
        raise CheckpointError("Moments file missing", context={'path': npz_path})
    if manifest.get('plan') != plan.describe():
        raise CheckpointError("Checkpoint was written with a different moment plan",
                              context={'expected': plan.describe(), 'found': manifest.get('plan')})
    _verify(npz_path, manifest['moments_sha256'])

    moments = EnsembleMoments(plan, manifest['sample_times'])
    with np.load(npz_path) as data:
        for name in _ACCUMULATORS:
            if data[name].shape != getattr(moments, name).shape:
                raise CheckpointError("Moments shape does not match the moment plan",
                                      context={'array': name, 'shape': data[name].shape})
            setattr(moments, name, data[name].copy())
        count = int(data['count'])
        moments.count = count
        moments.trajectory_ids = [int(t) for t in data['trajectory_ids']]
        moments._totals = list(data['totals'])
        moments._scattered = list(data['scattered'])
        moments._quadrants = list(data['quadrants'])
        for axis in range(3):
            moments._bb[axis] = list(data[f'bb_{axis}'])
            moments._cl[axis] = list(data[f'cl_{axis}'])
    moments.discarded = {int(k): float(v) for k, v in manifest.get('discarded', {}).items()}
    logger.info(f"Loaded moments checkpoint: {count} valid trajectories")
    return moments


def read_manifest(directory: str) -> Dict[str, Any]:
    return _read_json(os.path.join(directory, 'manifest.json'))


# 轨迹场快照

def save_field_snapshot(pair: FieldPair, directory: str, config_hash: str, seed: int) -> str:
    fields_dir = os.path.join(directory, 'fields')
    os.makedirs(fields_dir, exist_ok=True)
    stem = os.path.join(fields_dir, f"traj_{pair.trajectory_id}")
    stacked = np.stack([pair.psi.values, pair.psi_tilde.values])
    stacked.astype('<c16').view('<f8').tofile(stem + '.bin')
    _write_json(stem + '.json', {
        'config_hash': config_hash,
        'seed': int(seed),
        'trajectory_id': pair.trajectory_id,
        'time': pair.time,
        'space': pair.psi.space.value,
        'shape': list(pair.psi.values.shape),
        'lattice': pair.lattice.describe(),
        'sha256': calculate_sha256(stem + '.bin'),
    })
    return stem + '.bin'


def load_field_snapshot(directory: str, trajectory_id: int) -> FieldPair:
    stem = os.path.join(directory, 'fields', f"traj_{trajectory_id}")
    meta = _read_json(stem + '.json')
    _verify(stem + '.bin', meta['sha256'])
    lattice = Lattice3D(tuple(meta['lattice']['points']), tuple(meta['lattice']['box_lengths']))
    values = np.fromfile(stem + '.bin', dtype='<f8').view('<c16')
    values = values.reshape((2,) + tuple(meta['shape']))
    space = Space(meta['space'])
    return FieldPair(ComplexField(values[0], space, lattice), ComplexField(values[1], space, lattice),
                     meta['time'], meta['trajectory_id'], meta['seed'])
