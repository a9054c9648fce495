"""
Positive-P versus exact few-mode evolution

The few-mode Hamiltonian is the lattice model on an (M, 1, 1) ring of unit
volume: plane wave j is FFT bin j, its frequency goes in as a dispersion
override and the interaction as U0 = chi V. The stochastic integrator is
then run unchanged on batches of trajectories.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from analysis.quadrants import NumberStatistics
from config import Config
from simulation.dynamics import FieldPair, SimConfig, integrate, trajectory_rng
from simulation.lattice import ComplexField, Space, degenerate_lattice, to_position
from utils.error_formatter import OracleError
from utils.logger import get_logger, log_execution_time
from validation.oracle import ExactMoments, FewModeSystem, evolve_exact

logger = get_logger(__name__)

MIN_TRAJECTORIES = 100
G2_MIN_OCCUPATION = 0.02  # smallest exact occupation whose g2 is compared
RING_LENGTH = 1.0


@dataclass
class MomentComparison:
    moment: str
    gbar_t: float
    exact: float
    stochastic: float
    standard_error: float

    @property
    def z(self) -> float:
        if not self.standard_error > 0:
            return float('nan')
        return (self.stochastic - self.exact) / self.standard_error

    def to_dict(self) -> Dict:
        out = asdict(self)
        out['z'] = self.z
        return out


@dataclass
class ComparisonReport:
    modes: int
    trajectories: int
    discarded: int
    threshold: float
    comparisons: List[MomentComparison] = field(default_factory=list)
    convergence: List[Dict] = field(default_factory=list)
    samples: Dict[float, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def max_abs_z(self) -> float:
        values = [abs(c.z) for c in self.comparisons if np.isfinite(c.z)]
        return max(values) if values else float('nan')

    @property
    def passed(self) -> bool:
        finite = all(np.isfinite(c.z) for c in self.comparisons)
        converged = all(row['passed'] for row in self.convergence)
        return finite and self.max_abs_z < self.threshold and converged

    def failures(self) -> List[str]:
        out = [f"{c.moment}@gt={c.gbar_t:g}: z={c.z:.2f}" for c in self.comparisons
               if not (np.isfinite(c.z) and abs(c.z) < self.threshold)]
        out += [f"dt-halving {row['moment']}@gt={row['gbar_t']:g}" for row in self.convergence
                if not row['passed']]
        return out

    def to_dict(self) -> Dict:
        return {
            'modes': self.modes,
            'trajectories': self.trajectories,
            'discarded': self.discarded,
            'threshold': self.threshold,
            'passed': self.passed,
            'max_abs_z': self.max_abs_z,
            'comparisons': [c.to_dict() for c in self.comparisons],
            'convergence': self.convergence,
        }


class PairedIncrements:
    """
    Noise source for a run with twice the time step, built from the draws a
    run with the original step makes on the same stream: each coarse
    increment is the normalised sum of two consecutive fine ones.
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._pending = None

    def standard_normal(self, shape):
        if self._pending is not None:
            out, self._pending = self._pending, None
            return out
        first_psi = self.rng.standard_normal(shape)
        first_tilde = self.rng.standard_normal(shape)
        second_psi = self.rng.standard_normal(shape)
        second_tilde = self.rng.standard_normal(shape)
        self._pending = (first_tilde + second_tilde) / np.sqrt(2.0)
        return (first_psi + second_psi) / np.sqrt(2.0)


def ring_setup(system: FewModeSystem):
    """(lattice, coupling U0, dispersion, initial pair) for the positive-P run."""
    m = system.modes
    lattice = degenerate_lattice((m, 1, 1), (RING_LENGTH, RING_LENGTH, RING_LENGTH))
    dispersion = np.asarray(system.frequencies, dtype=float).reshape(m, 1, 1)
    coupling = system.chi * lattice.volume
    amplitudes = ComplexField(np.asarray(system.amplitudes).reshape(m, 1, 1), Space.MOMENTUM, lattice)
    psi = to_position(amplitudes)
    initial = FieldPair(psi, ComplexField(np.conj(psi.values), Space.POSITION, lattice))
    return lattice, coupling, dispersion, initial


def run_positive_p(system: FewModeSystem, gbar_times: Sequence[float], trajectories: int,
                   steps_per_gbar_time: int = 200, base_seed: int = 0, batch_size: int = 2000,
                   paired: bool = False) -> Dict[float, np.ndarray]:
    """
    Per-trajectory mode numbers Psi-tilde_j Psi_j, shaped (valid, M), keyed by gbar t.
    Batch b draws from trajectory_rng(base_seed, b).
    """
    if trajectories < MIN_TRAJECTORIES:
        raise OracleError("Ensemble too small for the requested precision",
                          context={'trajectories': trajectories, 'minimum': MIN_TRAJECTORIES})
    gbar_times = sorted({float(g) for g in gbar_times})
    lattice, coupling, dispersion, initial = ring_setup(system)
    t_final = gbar_times[-1] / system.gbar
    n_steps = int(round(gbar_times[-1] * steps_per_gbar_time))
    config = SimConfig(None, lattice, t_final, n_steps, trajectories, base_seed,
                       sample_fractions=[g / gbar_times[-1] for g in gbar_times],
                       coupling=coupling, dispersion=dispersion)
    reference = float(system.occupations.max()) / lattice.volume

    collected: Dict[int, List[np.ndarray]] = {s: [] for s in config.sample_steps}
    discarded = 0
    for batch, start in enumerate(range(0, trajectories, batch_size)):
        size = min(batch_size, trajectories - start)
        rng = trajectory_rng(base_seed, batch)
        noise = PairedIncrements(rng) if paired else rng
        samples, valid, _ = integrate(initial.batched(size), config, noise, reference)
        discarded += int((~valid).sum())
        for step in config.sample_steps:
            psi_k = samples[step].psi.values.reshape(size, -1)
            tilde_k = samples[step].psi_tilde.values.reshape(size, -1)
            collected[step].append((tilde_k * psi_k)[valid])

    if discarded:
        logger.warning(f"{discarded} of {trajectories} few-mode trajectories diverged")
    return {g: np.concatenate(collected[s]) for g, s in zip(gbar_times, config.sample_steps)}


def _compared_moments(system: FewModeSystem, exact: ExactMoments, ti: int,
                      stats: NumberStatistics, gbar_t: float) -> List[MomentComparison]:
    if gbar_t == 0:
        return []
    signals = system.signal_modes
    rows = []
    for j in signals:
        values = stats.samples[:, j].real
        rows.append(MomentComparison(f"n_{j}", gbar_t, float(exact.numbers[ti, j]),
                                     float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))))
    populated = [j for j in signals if exact.numbers[ti, j] >= G2_MIN_OCCUPATION]
    for a, j in enumerate(populated):
        for k in populated[a:]:
            value, se = stats.g2(str(j), str(k))
            rows.append(MomentComparison(f"g2_{j}{k}", gbar_t, float(exact.g2(j, k)[ti]), value, se))
    if system.modes >= 3:
        i, j = 1, system.modes - 1
        value, se = stats.variance(str(i), str(j))
        rows.append(MomentComparison(f"V_{i}-{j}", gbar_t, float(exact.pair_variance(i, j)[ti]), value, se))
    return rows


def step_halving_check(system: FewModeSystem, gbar_times: Sequence[float], trajectories: int,
                       steps_per_gbar_time: int, base_seed: int = 0) -> List[Dict]:
    """
    Moments with time step dt and dt/2 on shared noise paths; each
    difference must stay below the coarse standard error.
    """
    fine = run_positive_p(system, gbar_times, trajectories, 2 * steps_per_gbar_time, base_seed)
    coarse = run_positive_p(system, gbar_times, trajectories, steps_per_gbar_time, base_seed, paired=True)
    labels = [str(j) for j in range(system.modes)]
    rows = []
    for g in sorted(g for g in fine if g > 0):
        n = min(len(fine[g]), len(coarse[g]))
        fine_stats = NumberStatistics(fine[g][:n], 'normal', labels)
        coarse_stats = NumberStatistics(coarse[g][:n], 'normal', labels)
        for j in system.signal_modes:
            coarse_values = coarse_stats.samples[:, j].real
            se = float(coarse_values.std(ddof=1) / np.sqrt(n))
            diff = float(fine_stats.samples[:, j].real.mean() - coarse_values.mean())
            rows.append({'moment': f"n_{j}", 'gbar_t': g, 'difference': diff,
                         'standard_error': se, 'passed': bool(abs(diff) < se)})
    return rows


def report_from_samples(system: FewModeSystem, samples: Dict[float, np.ndarray], trajectories: int,
                        threshold: Optional[float] = None) -> ComparisonReport:
    """Comparison of stored positive-P samples (keyed by gbar t) with the exact solution."""
    threshold = threshold or Config.ORACLE_Z_THRESHOLD
    gbar_times = sorted(samples)
    exact = evolve_exact(system, [g / system.gbar for g in gbar_times])
    labels = [str(j) for j in range(system.modes)]
    report = ComparisonReport(system.modes, trajectories,
                              trajectories - min(len(v) for v in samples.values()), threshold,
                              samples=samples)
    for ti, g in enumerate(gbar_times):
        stats = NumberStatistics(samples[g], 'normal', labels)
        report.comparisons.extend(_compared_moments(system, exact, ti, stats, g))
    return report


@log_execution_time()
def compare_positive_p(system: FewModeSystem, trajectories: int, gbar_times: Sequence[float],
                       steps_per_gbar_time: int = 200, base_seed: int = 0,
                       threshold: Optional[float] = None, check_step_halving: bool = False,
                       batch_size: int = 2000) -> ComparisonReport:
    """z-scores of positive-P moments against the exact solution at each gbar t."""
    samples = run_positive_p(system, gbar_times, trajectories, steps_per_gbar_time, base_seed, batch_size)
    report = report_from_samples(system, samples, trajectories, threshold)

    if check_step_halving:
        report.convergence = step_halving_check(system, gbar_times, trajectories,
                                                steps_per_gbar_time, base_seed + 1)

    status = "passed" if report.passed else "FAILED"
    logger.info(f"Positive-P vs exact, M={system.modes}: {status}, max |z| = {report.max_abs_z:.2f}")
    return report
