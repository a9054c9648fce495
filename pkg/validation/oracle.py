"""
Exact few-mode four-wave mixing

M plane-wave modes of a ring (momentum index j mod M) with

    H/hbar = sum_j w_j n_j + (chi/2) sum_{j1+j2 = j3+j4 mod M} a+_j1 a+_j2 a_j3 a_j4 .

H conserves the total number N and the momentum P = sum_j j n_j mod M, so
the truncated Fock space is split into (N, P) sectors and each sector is
evolved on its own with a sparse Krylov exponential. Observables are
number-conserving and therefore sums over sectors.
"""

from dataclasses import dataclass, field, replace
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply
from scipy.special import gammaln

from config import Config
from utils.error_formatter import ConfigError, OracleError
from utils.logger import get_logger, log_execution_time

logger = get_logger(__name__)

SECTOR_WEIGHT_FLOOR = 1e-13


@dataclass(frozen=True)
class FewModeSystem:
    frequencies: Tuple[float, ...]        # w_j, rad/s
    chi: float                            # rad/s
    amplitudes: Tuple[complex, ...]       # coherent initial amplitudes
    cutoffs: Tuple[int, ...]              # highest Fock level per mode
    gbar: float = 1.0                     # chi |alpha_pump|^2, sets the time unit

    def __post_init__(self):
        m = len(self.frequencies)
        if not 2 <= m <= 4:
            raise ConfigError("Few-mode systems have 2 to 4 modes", context={'modes': m})
        if len(self.amplitudes) != m or len(self.cutoffs) != m:
            raise ConfigError("One amplitude and one cutoff per mode required")
        if any(c < 1 for c in self.cutoffs):
            raise ConfigError("Cutoffs must be positive")

    @property
    def modes(self) -> int:
        return len(self.frequencies)

    @property
    def occupations(self) -> np.ndarray:
        return np.abs(np.asarray(self.amplitudes)) ** 2

    @property
    def signal_modes(self) -> Tuple[int, ...]:
        return tuple(j for j in range(self.modes) if self.occupations[j] == 0)

    def with_cutoffs(self, cutoffs: Sequence[int]) -> 'FewModeSystem':
        return replace(self, cutoffs=tuple(int(c) for c in cutoffs))

    def doubled_cutoffs(self) -> 'FewModeSystem':
        """Vacuum modes get twice the levels; coherent modes keep their Poisson tail."""
        doubled = [c if self.occupations[j] > 0 else 2 * c for j, c in enumerate(self.cutoffs)]
        return self.with_cutoffs(doubled)

    @classmethod
    def four_wave_mixing(cls, modes: int, pump_occupation: float, gbar: float = 1.0,
                         detuning: float = 0.0, off_resonant_detuning: float = 4.0,
                         signal_cutoff: int = 24) -> 'FewModeSystem':
        """
        Pump in mode 0 with <n> = pump_occupation and chi = gbar / pump_occupation.
        Signal modes sit on the pair resonance w = -chi n0 + detuning (detunings
        in gbar units); for M = 4 the Nyquist mode is moved off resonance.
        """
        if pump_occupation <= 0 or gbar <= 0:
            raise ConfigError("Pump occupation and gbar must be positive")
        chi = gbar / pump_occupation
        resonant = -chi * pump_occupation + detuning * gbar
        frequencies = [0.0] + [resonant] * (modes - 1)
        if modes == 4:
            frequencies[2] = -chi * pump_occupation + off_resonant_detuning * gbar
        amplitudes = [np.sqrt(pump_occupation)] + [0.0] * (modes - 1)
        pump_cutoff = int(np.ceil(pump_occupation + 8.0 * np.sqrt(pump_occupation) + 20))
        cutoffs = [pump_cutoff] + [int(signal_cutoff)] * (modes - 1)
        return cls(tuple(frequencies), chi, tuple(complex(a) for a in amplitudes), tuple(cutoffs), gbar)


@dataclass
class ExactMoments:
    """Normally ordered moments of the exact state at each requested time."""
    times: np.ndarray
    numbers: np.ndarray            # (T, M)
    normal_moments: np.ndarray     # (T, M, M)  <a+_i a+_j a_j a_i>
    norm: np.ndarray               # (T,)
    total_number: np.ndarray       # (T,)
    leakage: np.ndarray            # (T,)
    cutoffs: Tuple[int, ...] = ()
    dimensions: Dict[str, int] = field(default_factory=dict)

    def g2(self, i: int, j: int) -> np.ndarray:
        """g2_ij(0); NaN where either mode is empty."""
        denominator = self.numbers[:, i] * self.numbers[:, j]
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.where(denominator > 0, self.normal_moments[:, i, j] / denominator, np.nan)

    def pair_variance(self, i: int, j: int) -> np.ndarray:
        """Relative-number variance V_{i-j}; NaN where both modes are empty."""
        n_i, n_j = self.numbers[:, i], self.numbers[:, j]
        m = self.normal_moments
        fluct = m[:, i, i] + m[:, j, j] - 2.0 * m[:, i, j] - (n_i - n_j) ** 2
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.where(n_i + n_j > 0, 1.0 + fluct / (n_i + n_j), np.nan)


def _coherent_log_weights(states: np.ndarray, amplitudes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(log |c|, phase) of the product coherent state on Fock basis rows."""
    log_mod = np.zeros(states.shape[0])
    phase = np.zeros(states.shape[0])
    for j, alpha in enumerate(amplitudes):
        n = states[:, j]
        if alpha == 0:
            log_mod = np.where(n == 0, log_mod, -np.inf)
            continue
        log_mod = log_mod - 0.5 * abs(alpha) ** 2 + n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1)
        phase = phase + n * np.angle(alpha)
    return log_mod, phase


class SectorBasis:
    """Fock states of one (N, P) sector within the per-mode cutoffs."""

    def __init__(self, total: int, momentum: int, cutoffs: Sequence[int]):
        self.total = total
        self.momentum = momentum
        self.cutoffs = np.asarray(cutoffs)
        m = len(cutoffs)
        grids = np.indices([c + 1 for c in cutoffs[1:]]).reshape(m - 1, -1).T
        n0 = total - grids.sum(axis=1)
        keep = (n0 >= 0) & (n0 <= cutoffs[0])
        states = np.column_stack([n0[keep], grids[keep]])
        p = (states * np.arange(m)).sum(axis=1) % m
        self.states = states[p == momentum].astype(np.int64)
        self.radices = np.cumprod([1] + [c + 1 for c in cutoffs[:-1]])
        self.keys = self.states @ self.radices
        order = np.argsort(self.keys)
        self.states = self.states[order]
        self.keys = self.keys[order]

    @property
    def dimension(self) -> int:
        return self.states.shape[0]

    def lookup(self, states: np.ndarray) -> np.ndarray:
        """Row index of each state, -1 where it is outside the basis."""
        if self.dimension == 0:
            return np.full(states.shape[0], -1)
        keys = states @ self.radices
        index = np.minimum(np.searchsorted(self.keys, keys), self.dimension - 1)
        return np.where(self.keys[index] == keys, index, -1)


def sector_hamiltonian(system: FewModeSystem, basis: SectorBasis) -> sparse.csr_matrix:
    """Sparse H/hbar on one sector, diagonal shifted by its mean."""
    m = system.modes
    states = basis.states
    dim = basis.dimension
    rows, cols, values = [], [], []

    diagonal = states @ np.asarray(system.frequencies, dtype=float)
    rows.append(np.arange(dim))
    cols.append(np.arange(dim))
    values.append(diagonal.astype(complex))

    half_chi = 0.5 * system.chi
    for j1, j2, j3 in product(range(m), repeat=3):
        j4 = (j1 + j2 - j3) % m
        current = states.copy()
        amplitude = np.ones(dim)
        for mode, create in ((j4, False), (j3, False), (j2, True), (j1, True)):
            n = current[:, mode]
            if create:
                amplitude = amplitude * np.sqrt(n + 1.0)
                current[:, mode] = n + 1
            else:
                amplitude = amplitude * np.sqrt(np.maximum(n, 0).astype(float))
                current[:, mode] = n - 1
        valid = (amplitude != 0) & np.all(current >= 0, axis=1) & np.all(current <= basis.cutoffs, axis=1)
        target = basis.lookup(current[valid])
        ok = target >= 0
        rows.append(target[ok])
        cols.append(np.nonzero(valid)[0][ok])
        values.append(half_chi * amplitude[valid][ok] + 0j)

    matrix = sparse.coo_matrix((np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(dim, dim)).tocsr()
    shift = float(diagonal.mean()) if dim else 0.0
    return matrix - shift * sparse.identity(dim, format='csr')


def _sector_range(system: FewModeSystem) -> range:
    mean = float(system.occupations.sum())
    spread = 8.0 * np.sqrt(mean) + 10.0
    return range(max(0, int(np.floor(mean - spread))), int(np.ceil(mean + spread)) + 1)


def _evolve_once(system: FewModeSystem, times: np.ndarray) -> ExactMoments:
    m = system.modes
    n_times = len(times)
    numbers = np.zeros((n_times, m))
    moments = np.zeros((n_times, m, m))
    norm = np.zeros(n_times)
    total = np.zeros(n_times)
    leakage = np.zeros(n_times)
    amplitudes = np.asarray(system.amplitudes)
    largest = 0
    sectors = 0

    for n_total in _sector_range(system):
        for momentum in range(m):
            basis = SectorBasis(n_total, momentum, system.cutoffs)
            if basis.dimension == 0:
                continue
            log_mod, phase = _coherent_log_weights(basis.states, amplitudes)
            weights = np.exp(2.0 * log_mod)
            if weights.sum() < SECTOR_WEIGHT_FLOOR:
                continue
            if basis.dimension > Config.ORACLE_MAX_DIMENSION:
                raise OracleError("Sector dimension above limit",
                                  context={'N': n_total, 'P': momentum, 'dimension': basis.dimension,
                                           'limit': Config.ORACLE_MAX_DIMENSION})
            largest = max(largest, basis.dimension)
            sectors += 1
            state0 = np.exp(log_mod + 1j * phase)
            hamiltonian = sector_hamiltonian(system, basis)

            n = basis.states.astype(float)
            pair_ops = n[:, :, None] * (n[:, None, :] - np.eye(m)[None])
            top = np.any(basis.states == basis.cutoffs, axis=1)
            for ti, t in enumerate(times):
                state = state0 if t == 0 else expm_multiply(-1j * t * hamiltonian, state0)
                prob = np.abs(state) ** 2
                norm[ti] += prob.sum()
                total[ti] += prob @ n.sum(axis=1)
                numbers[ti] += prob @ n
                moments[ti] += np.einsum('d,dij->ij', prob, pair_ops)
                leakage[ti] += prob[top].sum()

    return ExactMoments(np.asarray(times), numbers, moments, norm, total, leakage,
                        tuple(system.cutoffs), {'largest_sector': largest, 'sectors': sectors})


@log_execution_time()
def evolve_exact(system: FewModeSystem, times: Sequence[float]) -> ExactMoments:
    """
    Exact normally ordered moments at `times` (seconds). Cutoffs of vacuum
    modes are doubled while the top-level population exceeds
    Config.ORACLE_LEAKAGE_TOLERANCE.

    Raises:
        OracleError: leakage persists after Config.ORACLE_MAX_CUTOFF_DOUBLINGS
            doublings, or a sector exceeds Config.ORACLE_MAX_DIMENSION
    """
    times = np.asarray(sorted(float(t) for t in times))
    if np.any(times < 0):
        raise ConfigError("Times must be non-negative")
    current = system
    for attempt in range(Config.ORACLE_MAX_CUTOFF_DOUBLINGS + 1):
        result = _evolve_once(current, times)
        worst = float(result.leakage.max())
        if worst <= Config.ORACLE_LEAKAGE_TOLERANCE:
            logger.debug(f"Exact evolution: cutoffs {current.cutoffs}, {result.dimensions}")
            return result
        logger.info(f"Truncation leakage {worst:.2e} with cutoffs {current.cutoffs}; doubling")
        current = current.doubled_cutoffs()
    raise OracleError("Truncation leakage above tolerance",
                      context={'leakage': worst, 'cutoffs': current.cutoffs,
                               'tolerance': Config.ORACLE_LEAKAGE_TOLERANCE})
