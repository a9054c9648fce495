"""
Run Processing Module

Orchestrates the stages of an experiment from a RunConfig:

1. ground   - imaginary-time ground state, Thomas-Fermi comparison
2. run      - collision ensemble with moment checkpoints and resume
3. analyze  - halo profile, correlations, quadrant statistics, reports
4. predict  - analytic estimates only
5. validate - positive-P against exact few-mode evolution

Every stage writes into one run directory (see processors.report_writer).
Errors are logged once here with context and re-raised for the CLI to map
onto exit codes.
"""

import json
import os
import time
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np

from analysis.analytic import (
    EXPERIMENTAL_HALO_WIDTH, EXPERIMENTAL_SCATTERED_FRACTION, bb_peak_estimate,
    UniformPumpParams, halo_width_spontaneous, mode_counting, mode_occupancy,
    occupation_width, prediction_table,
)
from analysis.collision_model import CollisionDurationModel, CollisionModelParams
from analysis.observables import (
    AXES, ConsistencyCheck, MomentumDensity, correlation_set, count_scattered, density_slice,
    momentum_density, radial_profile, scattered_number, total_number,
)
from analysis.quadrants import quadrant_stats, quadrant_variance_series
from config import Config
from processors.report_writer import ReportWriter
from run_config import RunConfig, from_mapping
from simulation.checkpoint import (
    load_ground_state, load_moments, read_manifest, save_field_snapshot,
    save_ground_state, save_moments,
)
from simulation.dynamics import initialize_collision, max_sim_time, time_bound_warnings
from simulation.ensemble import EnsembleMoments, simulate_ensemble
from simulation.groundstate import (
    GroundState, solve_ground_state, thomas_fermi_mu_from_number, thomas_fermi_number,
)
from utils.error_formatter import CheckpointError, ConfigError, SimulationError, ValidationFailure
from utils.logger import bind_run, get_logger, log_error_with_context
from utils.validators import plan_workers, validate_json_structure
from validation.positive_p_check import compare_positive_p, report_from_samples

logger = get_logger(__name__)

OCCUPATION_WIDTH_TIMES = (1.0, 7.0)  # gbar t


class StageResult:
    """Outcome of one processing stage"""

    def __init__(self, stage: str, success: bool, duration: float = 0.0,
                 details: Optional[Dict[str, Any]] = None, error: str = ""):
        self.stage = stage
        self.success = success
        self.duration = duration
        self.details = details or {}
        self.error = error
        self.timestamp = datetime.now().isoformat()

    def to_dict(self) -> Dict[str, Any]:
        return {
            'stage': self.stage,
            'success': self.success,
            'duration': self.duration,
            'details': self.details,
            'error': self.error,
            'timestamp': self.timestamp,
        }


def load_artifact_config(directory: str) -> RunConfig:
    """RunConfig recorded in a run directory; the stored hash must reproduce."""

    path = os.path.join(directory, 'config.json')
    if not os.path.exists(path):
        raise CheckpointError("No config.json in run directory", context={'directory': directory})
    with open(path, 'r', encoding='utf-8') as f:
        stored = json.load(f)
    missing = validate_json_structure(stored, ['config_hash', 'seed', 'kind'])
    if missing:
        raise CheckpointError("Incomplete config.json", context={'missing': missing})

    raw = {k: v for k, v in stored.items() if k not in ('config_hash', 'seed')}
    run_config = from_mapping(raw, source=path)
    if run_config.config_hash != stored['config_hash']:
        raise CheckpointError("config.json does not reproduce its recorded hash",
                              context={'recorded': stored['config_hash'][:12],
                                       'computed': run_config.config_hash[:12]})
    return run_config


class RunProcessor:
    """
    Stage orchestrator for one run directory.

    Usage:
        processor = RunProcessor(preset('main'))
        summary = processor.run()
    """

    def __init__(self, run_config: RunConfig, output_dir: Optional[str] = None,
                 workers: Optional[int] = None, progress: bool = True):
        self.run_config = run_config
        self.output_dir = output_dir or run_config.output_directory()
        self.checkpoint_dir = os.path.join(self.output_dir, 'checkpoints')
        self.requested_workers = workers
        self.progress = progress
        self.warnings: List[str] = []
        self.stages: List[StageResult] = []
        self.writer = ReportWriter(self.output_dir, run_config.config_hash, run_config.seed,
                                   run_config.section('outputs')['formats'])
        os.makedirs(self.output_dir, exist_ok=True)
        bind_run(run_config.config_hash, run_config.seed)

    # ------------------------------------------------------------------
    # helpers

    def _stage(self, name: str, func, *args, **kwargs):
        start = time.time()
        logger.info(f"Stage '{name}' started")
        try:
            result = func(*args, **kwargs)
        except SimulationError as e:
            self.stages.append(StageResult(name, False, time.time() - start, error=e.message))
            self._write_stages()
            log_error_with_context(e, {'stage': name, 'config_hash': self.run_config.short_hash})
            raise
        duration = time.time() - start
        self.stages.append(StageResult(name, True, duration))
        self._write_stages()
        logger.success(f"Stage '{name}' finished in {duration:.1f}s")
        return result

    def _write_stages(self):
        # timings live here, never in summary.json
        self.writer.write_json('stages.json', {'stages': [s.to_dict() for s in self.stages]}, always=True)

    def _warn(self, message: str):
        if message not in self.warnings:
            logger.warning(message)
            self.warnings.append(message)

    def _write_config(self):
        data = self.run_config.to_dict()
        self.writer.config(data)

    def _base_summary(self) -> Dict[str, Any]:
        return {
            'kind': self.run_config.kind,
            'preset': self.run_config.preset,
            'scaling_note': self.run_config.scaling_note,
        }

    # ------------------------------------------------------------------
    # ground

    def _solve_ground(self) -> GroundState:
        params = self.run_config.physical_params()
        lattice = self.run_config.lattice()
        state = solve_ground_state(params, lattice, **self.run_config.solver_options())
        save_ground_state(state, self.checkpoint_dir)
        return state

    def ground_state(self, reuse: bool = True) -> GroundState:
        """Ground state from the checkpoint when it matches this config, else solved."""
        if reuse and os.path.exists(os.path.join(self.checkpoint_dir, 'ground_state.json')):
            state = load_ground_state(self.checkpoint_dir)
            lattice = self.run_config.lattice()
            if state.params != self.run_config.physical_params() or state.lattice.shape != lattice.shape:
                raise CheckpointError("Ground-state checkpoint belongs to different parameters",
                                      context={'directory': self.checkpoint_dir})
            logger.info("Reusing ground-state checkpoint")
            return state
        return self._stage('ground', self._solve_ground)

    def ground_summary(self, state: GroundState) -> Dict[str, Any]:
        params = state.params
        summary = state.summary()
        summary.update({
            'mu_thomas_fermi': thomas_fermi_mu_from_number(params, state.atom_number),
            'mu_over_mu_thomas_fermi': state.mu / thomas_fermi_mu_from_number(params, state.atom_number),
            'atom_number_thomas_fermi': thomas_fermi_number(params, state.peak_density),
            'k_r': params.k_r,
            'max_sim_time': max_sim_time(params, state.lattice, state.peak_density),
            'iterations': state.iterations,
        })
        return summary

    def ground(self) -> Dict[str, Any]:
        self._write_config()
        state = self.ground_state(reuse=False)
        summary = self._base_summary()
        summary['ground_state'] = self.ground_summary(state)
        self.writer.summary(summary)
        return summary

    # ------------------------------------------------------------------
    # run

    def _moments_checkpoint_exists(self) -> bool:
        return os.path.exists(os.path.join(self.checkpoint_dir, 'manifest.json'))

    def run(self, resume: bool = True) -> Dict[str, Any]:
        if self.run_config.kind != 'collision':
            raise ConfigError("run needs a collision config; use validate for few-mode configs")
        self._write_config()
        state = self.ground_state(reuse=resume)
        params = state.params
        lattice = state.lattice
        sim = self.run_config.sim_config(params, lattice)
        for message in time_bound_warnings(sim, state.peak_density):
            self._warn(message)

        initial = initialize_collision(state, params, lattice)
        plan = self.run_config.moment_plan(lattice, params.k_r)

        moments = None
        if resume and self._moments_checkpoint_exists():
            moments = load_moments(self.checkpoint_dir, plan, self.run_config.config_hash)

        workers = plan_workers(lattice.shape, len(sim.sample_steps), self.requested_workers)
        outputs = self.run_config.section('outputs')
        config_hash, seed = self.run_config.config_hash, self.run_config.seed

        def checkpoint(current: EnsembleMoments):
            save_moments(current, self.checkpoint_dir, config_hash, seed)

        def snapshot(record):
            if record.valid and record.samples:
                save_field_snapshot(record.samples[max(record.samples)], self.checkpoint_dir, config_hash, seed)

        moments = self._stage(
            'ensemble', simulate_ensemble, sim, initial, plan,
            workers=workers, moments=moments, on_progress=checkpoint,
            checkpoint_interval=outputs['checkpoint_interval'],
            on_record=snapshot if outputs['save_trajectory_fields'] else None,
            progress=self.progress,
        )
        return self.analyze(moments, state)

    # ------------------------------------------------------------------
    # analyze

    def check_consistency(self, moments: EnsembleMoments, sample: int,
                          density: Optional[MomentumDensity] = None) -> Dict[str, ConsistencyCheck]:
        """Im n(k) = 0 and <Psi-tilde> = conj(<Psi>) bin-wise, warning when either fails."""
        density = density or momentum_density(moments, sample)
        t = moments.sample_times[sample]
        checks = {
            'hermiticity': density.hermiticity_check(),
            'mean_field': moments.mean_field_check(sample),
        }
        labels = {'hermiticity': 'Im n(k) = 0', 'mean_field': '<Psi-tilde> = conj(<Psi>)'}
        for name, check in checks.items():
            if not check.passed():
                self._warn(f"{labels[name]} fails at t={t:.3e} s: {check.outliers}/{check.components} "
                           f"components beyond {check.threshold:g} s.e.")
        return checks

    def _sample_summary(self, moments: EnsembleMoments, sample: int, state: GroundState) -> Dict[str, Any]:
        analysis = self.run_config.section('analysis')
        k_r = state.params.k_r
        t = moments.sample_times[sample]
        density = momentum_density(moments, sample)
        n_sc, n_sc_se = scattered_number(moments, sample)
        n_total, n_total_se = total_number(moments, sample)
        _, fraction = count_scattered(density, k_r, analysis['scattered_exclusion'], total=n_total)
        checks = self.check_consistency(moments, sample, density)

        row: Dict[str, Any] = {
            'time': t,
            'N_sc': n_sc,
            'N_sc_se': n_sc_se,
            'N_total': n_total,
            'N_total_se': n_total_se,
            'fraction': fraction,
            'hermiticity_ratio': checks['hermiticity'].max_ratio,
            'mean_field_ratio': checks['mean_field'].max_ratio,
            'consistency': {name: check.to_dict() for name, check in checks.items()},
        }
        if t == 0:
            return row

        profile = radial_profile(density, k_r, analysis['axial_mask'], analysis['radial_bin_width'],
                                 tuple(analysis['halo_fit_range']), analysis['sloped_background'])
        row.update({
            'k0': profile.k0 / k_r,
            'delta_k': profile.width / k_r,
            'delta_k_spont': halo_width_spontaneous(state.params.mass, k_r, t) / k_r,
        })
        if profile.fit is not None:
            row['delta_k_se'] = profile.fit.errors.get('width', float('nan')) / k_r
        significance = profile.min_significance()
        if significance < 1.0:
            self._warn(f"Halo profile at t={t:.3e} s has bins below one standard error")
        return row

    def analyze(self, moments: Optional[EnsembleMoments] = None,
                state: Optional[GroundState] = None) -> Dict[str, Any]:
        """Reports from the given moments, or offline from the checkpoints."""
        if self.run_config.kind == 'fewmode':
            return self.analyze_fewmode()

        state = state or load_ground_state(self.checkpoint_dir)
        params = state.params
        k_r = params.k_r
        analysis = self.run_config.section('analysis')
        if moments is None:
            plan = self.run_config.moment_plan(state.lattice, k_r)
            manifest = read_manifest(self.checkpoint_dir)
            moments = load_moments(self.checkpoint_dir, plan, self.run_config.config_hash)
            logger.info(f"Analyzing checkpoint written {manifest.get('last_updated', 'unknown')}")

        summary = self._base_summary()
        summary['ground_state'] = self.ground_summary(state)
        summary['k_r'] = k_r
        summary['trajectories'] = {
            'planned': self.run_config.section('integration')['trajectories'],
            'valid': moments.count,
            'discarded': len(moments.discarded),
            'discarded_ids': sorted(moments.discarded),
        }
        if moments.discarded:
            self._warn(f"{len(moments.discarded)} diverged trajectories excluded from averages")

        samples = [self._sample_summary(moments, s, state) for s in range(moments.n_samples)]
        summary['samples'] = samples
        final = samples[-1]
        summary.update({key: final[key] for key in final if key != 'time'})
        summary['t_final'] = final['time']

        self._analyze_correlations(moments, summary, k_r)
        self._analyze_quadrants(moments, summary, analysis['eta'])
        self._analyze_scaling(summary, samples)
        self._analyze_mode_counting(summary, state)
        self._analyze_collision_model(summary, state, final)

        self._emit_profiles(moments, k_r, analysis)
        summary['warnings'] = list(self.warnings)
        summary['output_files'] = sorted(set(self.writer.written) | {'summary.json'})
        self.writer.summary(summary)
        logger.success(f"Analysis written to {self.output_dir}")
        return summary

    def _analyze_correlations(self, moments: EnsembleMoments, summary: Dict[str, Any], k_r: float):
        t = moments.sample_times[-1]
        if t == 0:
            return
        curves = correlation_set(moments, -1)
        self.writer.correlations(curves, k_r, t)
        for kind in ('bb', 'cl'):
            peaks, widths = [], []
            for axis in AXES:
                curve = curves[f"{kind}_{axis}"]
                zero, zero_se = curve.zero_lag
                summary[f"g2_{kind}_0_{axis}"] = curve.peak
                summary[f"g2_{kind}_zero_lag_{axis}"] = zero
                summary[f"g2_{kind}_zero_lag_{axis}_se"] = zero_se
                summary[f"sigma_{axis}_{kind}"] = curve.width / k_r
                peaks.append(curve.peak)
                widths.append(curve.width / k_r)
                if curve.dropped:
                    self._warn(f"g2 {kind}/{axis}: {curve.dropped} lag(s) dropped for vanishing denominator")
            summary[f"g2_{kind}_0"] = float(np.mean(peaks))
            summary[f"sigma_yz_{kind}"] = 0.5 * (widths[1] + widths[2])
        with np.errstate(divide='ignore', invalid='ignore'):
            summary['sigma_cl_over_bb_x'] = summary['sigma_x_cl'] / summary['sigma_x_bb']
            summary['sigma_cl_over_bb_yz'] = summary['sigma_yz_cl'] / summary['sigma_yz_bb']

    def _analyze_quadrants(self, moments: EnsembleMoments, summary: Dict[str, Any], eta: float):
        series = quadrant_variance_series(moments, eta)
        self.writer.quadrant_series(series)
        if moments.sample_times[-1] == 0:
            return
        try:
            stats = quadrant_stats(moments, -1, eta)
        except SimulationError as e:
            self._warn(f"Quadrant statistics unavailable: {e.message}")
            return
        document = stats.to_dict()
        document['series'] = series
        self.writer.quadrants(document)
        for pair, entry in document['pair_variances'].items():
            summary[pair] = entry['value']
            summary[f"{pair}_se"] = entry['se']
        summary['cauchy_schwarz_violations'] = [row['pair'] for row in stats.cauchy_schwarz
                                              if row['violated'] and row['significance'] > Config.SIGMA_THRESHOLD]
        summary['variance_identity_residual'] = max(stats.identity_residual.values())

    def _analyze_scaling(self, summary: Dict[str, Any], samples: List[Dict[str, Any]]):
        """Scattered number growth between the first non-zero and the last sample time."""
        timed = [row for row in samples if row['time'] > 0]
        if len(timed) < 2:
            return
        first, last = timed[0], timed[-1]
        ratio = last['N_sc'] / first['N_sc'] if first['N_sc'] else float('nan')
        summary['N_sc_growth'] = {
            't_first': first['time'],
            't_last': last['time'],
            'time_ratio': last['time'] / first['time'],
            'N_sc_ratio': ratio,
            'N_sc_ratio_se': abs(ratio) * np.hypot(first['N_sc_se'] / first['N_sc'],
                                                   last['N_sc_se'] / last['N_sc']) if first['N_sc'] and last['N_sc'] else float('nan'),
        }

    def _analyze_mode_counting(self, summary: Dict[str, Any], state: GroundState):
        delta_k = summary.get('delta_k')
        n_sc = summary.get('N_sc')
        if not delta_k or not np.isfinite(delta_k) or not n_sc or n_sc <= 0:
            return
        k_r = state.params.k_r
        beta = self.run_config.section('analysis')['beta']
        v_m, n_m = mode_counting(state.sigma_x / k_r, state.sigma_yz / k_r, 1.0, delta_k, beta)
        estimate = bb_peak_estimate(n_m, n_sc)
        summary.update({
            'V_m': v_m,
            'N_m': n_m,
            'occupancy': mode_occupancy(n_sc, n_m),
            'g2_bb_estimate': estimate,
        })
        if 'g2_bb_0' in summary:
            summary['g2_bb_over_estimate'] = summary['g2_bb_0'] / estimate

    def _analyze_collision_model(self, summary: Dict[str, Any], state: GroundState, final: Dict[str, Any]):
        transfer = self.run_config.section('analysis')['transfer_efficiency']
        try:
            model = CollisionDurationModel(CollisionModelParams.from_physical(
                state.params, state.peak_density, transfer))
            completed = model.completed_fraction(final['time']) if final['time'] > 0 else 0.0
        except SimulationError as e:
            self._warn(f"Collision-duration model unavailable: {e.message}")
            return
        entry = model.summary()
        entry['completed_fraction_at_t_final'] = completed
        if completed > 0:
            extrapolated = model.extrapolate(final['N_sc'], final['time'])
            entry['N_sc_extrapolated'] = extrapolated
            entry['fraction_extrapolated'] = extrapolated / final['N_total'] if final['N_total'] else float('nan')
        entry['experimental_fraction'] = EXPERIMENTAL_SCATTERED_FRACTION
        entry['experimental_delta_k'] = EXPERIMENTAL_HALO_WIDTH
        summary['collision_model'] = entry

    def _emit_profiles(self, moments: EnsembleMoments, k_r: float, analysis: Dict[str, Any]):
        for sample, t in enumerate(moments.sample_times):
            density = momentum_density(moments, sample)
            for plane in ('kz0', 'kx0'):
                self.writer.density_slice(density_slice(density, plane), k_r, sample, t)
        t = moments.sample_times[-1]
        if t > 0:
            density = momentum_density(moments, -1)
            profile = radial_profile(density, k_r, analysis['axial_mask'], analysis['radial_bin_width'],
                                     tuple(analysis['halo_fit_range']), analysis['sloped_background'])
            self.writer.halo_profile(profile, t)

    # ------------------------------------------------------------------
    # predict

    def predict(self) -> Dict[str, Any]:
        """Analytic table; source widths from the config or the ground-state checkpoint."""
        if self.run_config.kind != 'collision':
            raise ConfigError("predict needs a collision config")
        self._write_config()
        params = self.run_config.physical_params()
        analysis = self.run_config.section('analysis')
        sigma_x, sigma_yz = analysis['sigma_x'], analysis['sigma_yz']
        peak_density = params.peak_density

        if sigma_x is None or sigma_yz is None:
            if not os.path.exists(os.path.join(self.checkpoint_dir, 'ground_state.json')):
                raise ConfigError("predict needs analysis.sigma_x and analysis.sigma_yz "
                                  "or a ground-state checkpoint (run 'ground' first)")
            state = self.ground_state(reuse=True)
            sigma_x = sigma_x or state.sigma_x / params.k_r
            sigma_yz = sigma_yz or state.sigma_yz / params.k_r
            peak_density = state.peak_density

        duration = self.run_config.section('integration')['t_final']
        table = prediction_table(params, duration, sigma_x, sigma_yz,
                                 halo_width=analysis['halo_width'],
                                 n_scattered=analysis['scattered_number'],
                                 beta=analysis['beta'], peak_density=peak_density)
        if peak_density is not None:
            model = CollisionDurationModel(CollisionModelParams.from_physical(
                params, peak_density, analysis['transfer_efficiency']))
            table.update({
                'collision_end_time': model.end_time,
                'scattered_fraction_infinity': model.scattered_fraction(),
                'completed_fraction_at_t_final': model.completed_fraction(duration),
            })
            table['max_sim_time'] = max_sim_time(params, self.run_config.lattice(), peak_density)
            if params.a00 > 0:
                pump = UniformPumpParams.from_physical(params, peak_density)
                for gbar_t in OCCUPATION_WIDTH_TIMES:
                    table[f"occupation_width_gt{gbar_t:g}"] = occupation_width(gbar_t, pump) / params.k_r

        summary = self._base_summary()
        summary['prediction'] = table
        self.writer.summary(summary)
        return summary

    # ------------------------------------------------------------------
    # few-mode validation

    def _fewmode_samples_path(self) -> str:
        return os.path.join(self.checkpoint_dir, 'fewmode_samples.npz')

    def _save_fewmode_samples(self, reports):
        os.makedirs(self.checkpoint_dir, exist_ok=True)
        arrays = {}
        for report in reports:
            for g, values in report.samples.items():
                arrays[f"M{report.modes}_gt{g:.6g}"] = values
        np.savez(self._fewmode_samples_path(), **arrays)

    def _write_validation(self, reports, convergence_by_modes=None) -> Dict[str, Any]:
        passed = all(r.passed for r in reports)
        document = self._base_summary()
        document.update({
            'passed': passed,
            'systems': [r.to_dict() for r in reports],
            'z_threshold': reports[0].threshold if reports else Config.ORACLE_Z_THRESHOLD,
        })
        self.writer.validation_report(document)
        self.writer.summary({**document, 'warnings': list(self.warnings)})
        if not passed:
            failures = [f"M={r.modes}: {item}" for r in reports for item in r.failures()]
            raise ValidationFailure("Positive-P moments disagree with the exact solution",
                                    context={'failures': failures[:10]})
        return document

    def validate(self) -> Dict[str, Any]:
        self._write_config()
        section = self.run_config.section('fewmode')
        reports = []
        for system in self.run_config.fewmode_systems():
            report = self._stage(
                f"fewmode_M{system.modes}", compare_positive_p, system,
                trajectories=section['trajectories'],
                gbar_times=section['gbar_times'],
                steps_per_gbar_time=section['steps_per_gbar_time'],
                base_seed=section['base_seed'],
                check_step_halving=section['step_halving'],
                batch_size=section['batch_size'],
            )
            reports.append(report)
        self._save_fewmode_samples(reports)
        return self._write_validation(reports)

    def analyze_fewmode(self) -> Dict[str, Any]:
        """Rebuild the oracle report from stored few-mode samples."""
        path = self._fewmode_samples_path()
        if not os.path.exists(path):
            raise CheckpointError("No few-mode samples in run directory", context={'path': path})
        section = self.run_config.section('fewmode')
        previous = {}
        report_path = os.path.join(self.output_dir, 'validation_report.json')
        if os.path.exists(report_path):
            with open(report_path, 'r', encoding='utf-8') as f:
                previous = {s['modes']: s.get('convergence', []) for s in json.load(f).get('systems', [])}

        reports = []
        with np.load(path) as data:
            for system in self.run_config.fewmode_systems():
                prefix = f"M{system.modes}_gt"
                samples = {float(name[len(prefix):]): data[name] for name in data.files if name.startswith(prefix)}
                if not samples:
                    raise CheckpointError("Few-mode samples missing for system", context={'modes': system.modes})
                report = report_from_samples(system, samples, section['trajectories'])
                report.convergence = previous.get(system.modes, [])
                reports.append(report)
        return self._write_validation(reports)
