"""
Trajectory ensemble and moment accumulation

Trajectories run on a thread pool (numpy FFTs release the GIL) in rounds of
a few per worker. Each worker reduces its trajectory through the MomentPlan;
the main thread merges the reduced contributions strictly in trajectory-id
order, so the moments are bit-identical for any worker count.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from analysis.observables import ConsistencyCheck, MomentPlan, SampleContribution, z_ratios
from config import Config
from simulation.dynamics import FieldPair, SimConfig, TrajectoryRecord, run_trajectory
from utils.error_formatter import DivergenceError, SimulationError
from utils.logger import get_logger, log_execution_time

logger = get_logger(__name__)


class EnsembleMoments:
    """
    Running sums over valid trajectories for every sample time:
    per-bin density, mean-field mismatch Psi-tilde - conj(Psi) and <Psi>,
    plus per-trajectory scalar samples (total and scattered number, quadrant
    numbers, BB/CL lag numerators) kept whole for standard errors.
    """

    def __init__(self, plan: MomentPlan, sample_times: Sequence[float]):
        self.plan = plan
        self.sample_times = tuple(float(t) for t in sample_times)
        shape = (len(self.sample_times),) + plan.lattice.shape
        self.count = 0
        self.density_sum = np.zeros(shape, dtype=np.complex128)
        self.density_sq_real = np.zeros(shape)
        self.density_sq_imag = np.zeros(shape)
        self.mismatch_sum = np.zeros(shape, dtype=np.complex128)
        self.mismatch_sq_real = np.zeros(shape)
        self.mismatch_sq_imag = np.zeros(shape)
        self.psi_sum = np.zeros(shape, dtype=np.complex128)
        self.trajectory_ids: List[int] = []
        self.discarded: Dict[int, float] = {}
        self._totals: List[np.ndarray] = []
        self._scattered: List[np.ndarray] = []
        self._quadrants: List[np.ndarray] = []
        self._bb: List[List[np.ndarray]] = [[], [], []]
        self._cl: List[List[np.ndarray]] = [[], [], []]

    @property
    def n_samples(self) -> int:
        return len(self.sample_times)

    @property
    def completed_ids(self) -> List[int]:
        return sorted(self.trajectory_ids + list(self.discarded))

    def add(self, trajectory_id: int, contributions: Sequence[SampleContribution]):
        if len(contributions) != self.n_samples:
            raise SimulationError("Contribution count does not match sample times",
                                  context={'expected': self.n_samples, 'got': len(contributions)})
        for s, c in enumerate(contributions):
            self.density_sum[s] += c.density
            self.density_sq_real[s] += c.density.real ** 2
            self.density_sq_imag[s] += c.density.imag ** 2
            self.mismatch_sum[s] += c.mismatch
            self.mismatch_sq_real[s] += c.mismatch.real ** 2
            self.mismatch_sq_imag[s] += c.mismatch.imag ** 2
            self.psi_sum[s] += c.psi
        self._totals.append(np.array([c.total for c in contributions]))
        self._scattered.append(np.array([c.scattered for c in contributions]))
        self._quadrants.append(np.stack([c.quadrants for c in contributions]))
        for axis in range(3):
            self._bb[axis].append(np.stack([c.bb[axis] for c in contributions]))
            self._cl[axis].append(np.stack([c.cl[axis] for c in contributions]))
        self.trajectory_ids.append(int(trajectory_id))
        self.count += 1

    def discard(self, trajectory_id: int, failure_time: Optional[float]):
        self.discarded[int(trajectory_id)] = float('nan') if failure_time is None else float(failure_time)

    # per-trajectory samples, shaped (trajectories, samples, ...)

    @property
    def totals(self) -> np.ndarray:
        return np.asarray(self._totals).reshape(self.count, self.n_samples)

    @property
    def scattered(self) -> np.ndarray:
        return np.asarray(self._scattered).reshape(self.count, self.n_samples)

    @property
    def quadrants(self) -> np.ndarray:
        return np.asarray(self._quadrants).reshape(self.count, self.n_samples, 4)

    def _lag_samples(self, store: List[List[np.ndarray]]) -> List[np.ndarray]:
        return [np.asarray(store[a]).reshape(self.count, self.n_samples, self.plan.lags(a).size)
                for a in range(3)]

    @property
    def bb(self) -> List[np.ndarray]:
        return self._lag_samples(self._bb)

    @property
    def cl(self) -> List[np.ndarray]:
        return self._lag_samples(self._cl)

    # means and standard errors

    def _require(self, minimum: int = 1):
        if self.count < minimum:
            raise SimulationError(f"Need at least {minimum} valid trajectories, have {self.count}")

    def density_mean(self, sample: int = -1) -> np.ndarray:
        self._require()
        return self.density_sum[sample] / self.count

    def _standard_error(self, total: np.ndarray, squares: np.ndarray) -> np.ndarray:
        self._require(2)
        n = self.count
        mean = total / n
        variance = np.clip(squares / n - mean ** 2, 0.0, None) * n / (n - 1)
        return np.sqrt(variance / n)

    def density_standard_error(self, sample: int = -1) -> np.ndarray:
        """Standard error of Re n(k)."""
        return self._standard_error(self.density_sum[sample].real, self.density_sq_real[sample])

    def density_imag_standard_error(self, sample: int = -1) -> np.ndarray:
        return self._standard_error(self.density_sum[sample].imag, self.density_sq_imag[sample])

    def mismatch_mean(self, sample: int = -1) -> np.ndarray:
        self._require()
        return self.mismatch_sum[sample] / self.count

    def mismatch_standard_error(self, sample: int = -1):
        """(s.e. of real part, s.e. of imaginary part)"""
        return (self._standard_error(self.mismatch_sum[sample].real, self.mismatch_sq_real[sample]),
                self._standard_error(self.mismatch_sum[sample].imag, self.mismatch_sq_imag[sample]))

    def field_mean(self, sample: int = -1) -> np.ndarray:
        self._require()
        return self.psi_sum[sample] / self.count

    def mean_field_check(self, sample: int = -1, min_occupation: Optional[float] = None,
                         threshold: Optional[float] = None) -> ConsistencyCheck:
        """
        <Psi-tilde> against conj(<Psi>), real and imaginary parts separately,
        on the bins that carry a mean field (|<Psi>|^2 >= min_occupation).
        relative_offset is |<Psi-tilde> - conj(<Psi>)| / |<Psi>| over those bins.
        """
        if min_occupation is None:
            min_occupation = Config.MEAN_FIELD_MIN_OCCUPATION
        field = self.field_mean(sample)
        bins = np.abs(field) ** 2 >= min_occupation
        if not bins.any():
            return ConsistencyCheck.from_ratios(np.empty(0), threshold)

        mismatch = self.mismatch_mean(sample)[bins]
        real_se, imag_se = (se[bins] for se in self.mismatch_standard_error(sample))
        scale = float(np.max(np.abs(field[bins])))
        ratios = np.concatenate([z_ratios(mismatch.real, real_se, scale),
                                 z_ratios(mismatch.imag, imag_se, scale)])
        norm = np.linalg.norm(field[bins])
        offset = float(np.linalg.norm(mismatch) / norm) if norm > 0 else 0.0
        return ConsistencyCheck.from_ratios(ratios, threshold, offset)

    def summary(self) -> Dict:
        return {
            'valid_trajectories': self.count,
            'discarded_trajectories': len(self.discarded),
            'sample_times': list(self.sample_times),
        }


def _trajectory_contributions(init: FieldPair, config: SimConfig, plan: MomentPlan,
                              trajectory_id: int, reference_density: Optional[float]):
    record = run_trajectory(init, config, trajectory_id, reference_density)
    if not record.valid:
        return record, None
    contributions = []
    for step in config.sample_steps:
        pair = record.samples[step]
        contributions.append(plan.contribution(pair.psi.values, pair.psi_tilde.values))
    return record, contributions


def _batches(ids: Sequence[int], size: int) -> Iterable[List[int]]:
    for start in range(0, len(ids), size):
        yield list(ids[start:start + size])


@log_execution_time()
def simulate_ensemble(config: SimConfig, initial: FieldPair, plan: MomentPlan,
                      workers: Optional[int] = None,
                      moments: Optional[EnsembleMoments] = None,
                      on_progress: Optional[Callable[[EnsembleMoments], None]] = None,
                      checkpoint_interval: Optional[int] = None,
                      on_record: Optional[Callable[[TrajectoryRecord], None]] = None,
                      progress: bool = True) -> EnsembleMoments:
    """
    Run config.n_trajectories trajectories from `initial` and accumulate
    their moments.

    Args:
        moments: partially filled moments to resume; their completed ids are skipped
        on_progress: called with the moments every checkpoint_interval trajectories
            and once at the end
        on_record: called in trajectory order with every finished record

    Raises:
        DivergenceError: more than Config.MAX_INVALID_FRACTION of trajectories
            diverged, or fewer than two valid trajectories remain
    """
    workers = workers or Config.get_worker_count()
    interval = checkpoint_interval or Config.CHECKPOINT_INTERVAL
    moments = moments or EnsembleMoments(plan, config.sample_times)
    reference = config.reference_density or float(np.max(np.abs(initial.psi.values) ** 2))

    done = set(moments.completed_ids)
    pending = [tid for tid in range(config.n_trajectories) if tid not in done]
    if done:
        logger.info(f"Resuming ensemble: {len(done)} trajectories already accumulated")
    logger.info(f"Running {len(pending)} trajectories on {workers} worker(s), "
                f"{config.n_steps} steps of {config.dt:.3e} s")

    limit = Config.MAX_INVALID_FRACTION * config.n_trajectories
    since_checkpoint = 0
    bar = tqdm(total=len(pending), desc="Trajectories", unit="traj", disable=not progress)

    try:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            for batch in _batches(pending, 2 * workers):
                future_to_index = {
                    executor.submit(_trajectory_contributions, initial, config, plan, tid, reference): i
                    for i, tid in enumerate(batch)
                }
                batch_results = [None] * len(batch)
                for future in as_completed(future_to_index):
                    batch_results[future_to_index[future]] = future.result()
                    bar.update(1)

                for record, contributions in batch_results:
                    if on_record:
                        on_record(record)
                    if contributions is None:
                        moments.discard(record.trajectory_id, record.failure_time)
                    else:
                        moments.add(record.trajectory_id, contributions)

                if len(moments.discarded) > limit:
                    raise DivergenceError(
                        "Too many diverged trajectories",
                        context={'discarded': len(moments.discarded),
                                 'planned': config.n_trajectories,
                                 'max_fraction': Config.MAX_INVALID_FRACTION},
                    )

                since_checkpoint += len(batch)
                if on_progress and since_checkpoint >= interval:
                    on_progress(moments)
                    since_checkpoint = 0
    finally:
        bar.close()

    if moments.count < 2:
        raise DivergenceError("Fewer than two valid trajectories",
                              context={'valid': moments.count, 'discarded': len(moments.discarded)})
    if moments.discarded:
        logger.warning(f"{len(moments.discarded)} of {config.n_trajectories} trajectories diverged "
                       f"and were excluded; averages may be biased")
    if on_progress:
        on_progress(moments)

    logger.success(f"Ensemble complete: {moments.count} valid trajectories")
    return moments
