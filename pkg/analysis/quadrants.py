"""
Region number statistics

Relative-number variance between two regions,

    V_{i-j} = 1 + eta <:[D(N_i - N_j)]^2:> / (<N_i> + <N_j>),

pair correlations g_ij = <:N_i N_j:> / (<N_i><N_j>) and the Cauchy-Schwarz
comparison g_ij^2 vs g_ii g_jj. Samples are either positive-P region sums
(already normally ordered) or raw shot counts, for which
<:N_i N_j:> = <N_i N_j> - delta_ij <N_i>. Standard errors are delete-one
jackknife over samples.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from analysis.observables import QUADRANTS
from utils.error_formatter import SimulationError
from utils.logger import get_logger

logger = get_logger(__name__)

ORDERINGS = ('normal', 'counts')
OPPOSITE_PAIRS = (('A', 'C'), ('B', 'D'))
NEIGHBOUR_PAIRS = (('A', 'B'), ('C', 'D'))


def _variance(means: np.ndarray, moments: np.ndarray, i: int, j: int, eta: float) -> np.ndarray:
    mi, mj = means[..., i], means[..., j]
    fluct = moments[..., i, i] + moments[..., j, j] - 2.0 * moments[..., i, j] - (mi - mj) ** 2
    return 1.0 + eta * fluct / (mi + mj)


def _g2(means: np.ndarray, moments: np.ndarray, i: int, j: int) -> np.ndarray:
    return moments[..., i, j] / (means[..., i] * means[..., j])


class NumberStatistics:
    """Moments of region numbers from (samples, regions) data."""

    def __init__(self, samples: np.ndarray, ordering: str = 'normal',
                 labels: Sequence[str] = QUADRANTS):
        samples = np.asarray(samples)
        if samples.ndim != 2 or samples.shape[0] < 2:
            raise SimulationError("Number statistics need a (samples >= 2, regions) array",
                                  context={'shape': samples.shape})
        if ordering not in ORDERINGS:
            raise SimulationError(f"Unknown ordering '{ordering}'")
        if len(labels) != samples.shape[1]:
            raise SimulationError("One label per region required")
        self.samples = samples
        self.ordering = ordering
        self.labels = tuple(labels)

        products = samples[:, :, None] * samples[:, None, :]
        if ordering == 'counts':
            products = products - np.einsum('ti,ij->tij', samples, np.eye(samples.shape[1]))
        self._first = samples
        self._second = products

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise SimulationError(f"Unknown region '{label}'", context={'labels': self.labels})

    @property
    def means(self) -> np.ndarray:
        return self._first.mean(axis=0).real

    @property
    def normal_moments(self) -> np.ndarray:
        return self._second.mean(axis=0).real

    def _leave_one_out(self) -> Tuple[np.ndarray, np.ndarray]:
        n = self.n_samples
        first = (self._first.sum(axis=0) - self._first) / (n - 1)
        second = (self._second.sum(axis=0) - self._second) / (n - 1)
        return first.real, second.real

    @staticmethod
    def _jackknife_error(values: np.ndarray) -> float:
        n = values.shape[0]
        return float(np.sqrt((n - 1) / n * np.sum((values - values.mean()) ** 2)))

    def variance(self, i: str, j: str, eta: float = 1.0) -> Tuple[float, float]:
        """(V_{i-j}, jackknife s.e.)"""
        a, b = self.index(i), self.index(j)
        value = float(_variance(self.means, self.normal_moments, a, b, eta))
        first, second = self._leave_one_out()
        return value, self._jackknife_error(_variance(first, second, a, b, eta))

    def g2(self, i: str, j: str) -> Tuple[float, float]:
        a, b = self.index(i), self.index(j)
        value = float(_g2(self.means, self.normal_moments, a, b))
        first, second = self._leave_one_out()
        return value, self._jackknife_error(_g2(first, second, a, b))

    def variance_from_correlations(self, i: str, j: str, eta: float = 1.0) -> float:
        """
        1 + eta <N>(g_ii - g_ij); equals variance(i, j) when the two regions
        are statistically symmetric (see symmetrized).
        """
        a, b = self.index(i), self.index(j)
        mean = 0.5 * (self.means[a] + self.means[b])
        g_auto = 0.5 * (_g2(self.means, self.normal_moments, a, a) + _g2(self.means, self.normal_moments, b, b))
        return float(1.0 + eta * mean * (g_auto - _g2(self.means, self.normal_moments, a, b)))

    def symmetrized(self, i: str, j: str) -> 'NumberStatistics':
        """Two-region statistics with every sample also entered with i and j swapped."""
        a, b = self.index(i), self.index(j)
        pair = self.samples[:, [a, b]]
        doubled = np.concatenate([pair, pair[:, ::-1]])
        return NumberStatistics(doubled, self.ordering, labels=(i, j))

    def cauchy_schwarz(self, i: str, j: str) -> Dict[str, float]:
        g_ij, se_ij = self.g2(i, j)
        g_ii, _ = self.g2(i, i)
        g_jj, _ = self.g2(j, j)
        bound = float(np.sqrt(g_ii * g_jj)) if g_ii * g_jj > 0 else float('nan')
        return {
            'pair': f"{i}{j}",
            'g_ij': g_ij,
            'g_ij_se': se_ij,
            'g_ii': g_ii,
            'g_jj': g_jj,
            'bound': bound,
            'violated': bool(g_ij > bound),
            'significance': (g_ij - bound) / se_ij if se_ij > 0 else float('nan'),
        }


@dataclass
class QuadrantStats:
    labels: Tuple[str, ...]
    means: np.ndarray
    normal_moments: np.ndarray
    variance: np.ndarray
    variance_se: np.ndarray
    g2: np.ndarray
    g2_se: np.ndarray
    eta: float
    time: float = 0.0
    cauchy_schwarz: List[Dict[str, float]] = field(default_factory=list)
    identity_residual: Dict[str, float] = field(default_factory=dict)

    def pair_variance(self, i: str, j: str) -> Tuple[float, float]:
        a, b = self.labels.index(i), self.labels.index(j)
        return float(self.variance[a, b]), float(self.variance_se[a, b])

    def to_dict(self) -> Dict:
        pairs = {}
        for i, j in OPPOSITE_PAIRS + NEIGHBOUR_PAIRS:
            value, se = self.pair_variance(i, j)
            pairs[f"V_{i}-{j}"] = {'value': value, 'se': se}
        return {
            'time': self.time,
            'eta': self.eta,
            'labels': list(self.labels),
            'mean_numbers': self.means.tolist(),
            'normal_moments': self.normal_moments.tolist(),
            'variance_matrix': self.variance.tolist(),
            'variance_se_matrix': self.variance_se.tolist(),
            'g2_matrix': self.g2.tolist(),
            'g2_se_matrix': self.g2_se.tolist(),
            'pair_variances': pairs,
            'cauchy_schwarz': self.cauchy_schwarz,
            'identity_residual': self.identity_residual,
        }


def region_stats(statistics: NumberStatistics, eta: float = 1.0, time: float = 0.0) -> QuadrantStats:
    labels = statistics.labels
    size = len(labels)
    if np.any(statistics.means <= 0):
        raise SimulationError("Region with non-positive mean number",
                              context={'means': statistics.means.tolist()})
    variance = np.full((size, size), np.nan)
    variance_se = np.full((size, size), np.nan)
    g2 = np.empty((size, size))
    g2_se = np.empty((size, size))
    for a, i in enumerate(labels):
        for b, j in enumerate(labels):
            g2[a, b], g2_se[a, b] = statistics.g2(i, j)
            if a != b:
                variance[a, b], variance_se[a, b] = statistics.variance(i, j, eta)

    report = [statistics.cauchy_schwarz(i, j) for i, j in combinations(labels, 2)]
    residual = {}
    for i, j in combinations(labels, 2):
        sym = statistics.symmetrized(i, j)
        residual[f"{i}{j}"] = abs(sym.variance(i, j, eta)[0] - sym.variance_from_correlations(i, j, eta))

    return QuadrantStats(tuple(labels), statistics.means, statistics.normal_moments,
                         variance, variance_se, g2, g2_se, eta, time, report, residual)


def quadrant_stats(moments, sample: int = -1, eta: float = 1.0) -> QuadrantStats:
    """Quadrant statistics of the halo shell at one sample time of the ensemble."""
    empty = [QUADRANTS[q] for q, mask in enumerate(moments.plan.quadrant_masks) if not mask.any()]
    if empty:
        raise SimulationError("Empty quadrant in the halo shell", context={'quadrants': empty})
    statistics = NumberStatistics(moments.quadrants[:, sample, :], ordering='normal')
    return region_stats(statistics, eta, moments.sample_times[sample])


def quadrant_variance_series(moments, eta: float = 1.0) -> List[Dict[str, float]]:
    """Opposite and neighbouring pair variances at every sample time."""
    series = []
    for sample, time in enumerate(moments.sample_times):
        statistics = NumberStatistics(moments.quadrants[:, sample, :], ordering='normal')
        row = {'time': time}
        for i, j in OPPOSITE_PAIRS + NEIGHBOUR_PAIRS:
            try:
                value, se = statistics.variance(i, j, eta)
            except (FloatingPointError, ZeroDivisionError):
                value, se = float('nan'), float('nan')
            row[f"V_{i}-{j}"] = value
            row[f"V_{i}-{j}_se"] = se
        series.append(row)
    return series


def apply_efficiency(variance: float, eta: float) -> float:
    """Variance seen with detection efficiency eta, given the eta = 1 value."""
    return 1.0 + eta * (variance - 1.0)
