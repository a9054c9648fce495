"""Tests for region number statistics"""

from types import SimpleNamespace

import numpy as np
import pytest

from analysis.quadrants import (
    NumberStatistics, apply_efficiency, quadrant_stats, quadrant_variance_series, region_stats,
)
from utils.error_formatter import SimulationError


@pytest.fixture
def paired_counts(rng):
    """Shot counts with A = C and B = D exactly, each Poissonian."""
    a = rng.poisson(20.0, size=20000)
    b = rng.poisson(20.0, size=20000)
    return np.stack([a, b, a, b], axis=1).astype(float)


@pytest.fixture
def independent_counts(rng):
    return rng.poisson(50.0, size=(20000, 4)).astype(float)


class TestNumberStatistics:
    """Variances and correlations from sampled region numbers"""

    def test_perfect_pairs_have_zero_variance(self, paired_counts):
        statistics = NumberStatistics(paired_counts, ordering='counts')
        value, se = statistics.variance('A', 'C')
        assert value == pytest.approx(0.0, abs=1e-12)
        assert se == pytest.approx(0.0, abs=1e-9)

    def test_poisson_regions_at_shot_noise(self, independent_counts):
        statistics = NumberStatistics(independent_counts, ordering='counts')
        value, se = statistics.variance('A', 'B')
        assert value == pytest.approx(1.0, abs=0.05)
        assert 0 < se < 0.05
        g2, _ = statistics.g2('A', 'A')
        assert g2 == pytest.approx(1.0, abs=0.01)

    def test_efficiency_scales_excess(self, paired_counts):
        statistics = NumberStatistics(paired_counts, ordering='counts')
        assert statistics.variance('A', 'C', eta=0.1)[0] == pytest.approx(0.9, abs=1e-12)
        assert apply_efficiency(0.0, 0.1) == pytest.approx(0.9)
        assert apply_efficiency(1.0, 0.3) == pytest.approx(1.0)

    def test_coherent_samples(self):
        samples = np.tile([[10.0, 10.0, 10.0, 10.0]], (5, 1)) + 0j
        statistics = NumberStatistics(samples)
        assert statistics.variance('A', 'C')[0] == pytest.approx(1.0)
        assert statistics.g2('B', 'D')[0] == pytest.approx(1.0)

    def test_cauchy_schwarz_violation(self, paired_counts):
        report = NumberStatistics(paired_counts, ordering='counts').cauchy_schwarz('A', 'C')
        assert report['pair'] == 'AC'
        assert report['g_ij'] == pytest.approx(1.05, abs=0.01)
        assert report['violated'] is True
        assert report['significance'] > 3.0

    def test_symmetrized_identity(self, independent_counts):
        statistics = NumberStatistics(independent_counts, ordering='counts')
        symmetric = statistics.symmetrized('A', 'B')
        assert symmetric.labels == ('A', 'B')
        assert symmetric.n_samples == 2 * statistics.n_samples
        assert symmetric.variance('A', 'B')[0] == pytest.approx(
            symmetric.variance_from_correlations('A', 'B'), rel=1e-9)

    @pytest.mark.parametrize("samples, kwargs", [
        (np.ones((1, 4)), {}),
        (np.ones(4), {}),
        (np.ones((3, 4)), {'ordering': 'antinormal'}),
        (np.ones((3, 3)), {}),
    ])
    def test_rejects_bad_input(self, samples, kwargs):
        with pytest.raises(SimulationError):
            NumberStatistics(samples, **kwargs)

    def test_unknown_label(self, independent_counts):
        with pytest.raises(SimulationError):
            NumberStatistics(independent_counts).variance('A', 'E')


class TestRegionStats:
    """Full quadrant report"""

    def test_report_contents(self, paired_counts):
        stats = region_stats(NumberStatistics(paired_counts, ordering='counts'), time=2e-5)
        document = stats.to_dict()

        assert document['time'] == 2e-5
        assert set(document['pair_variances']) == {'V_A-C', 'V_B-D', 'V_A-B', 'V_C-D'}
        assert document['pair_variances']['V_A-C']['value'] == pytest.approx(0.0, abs=1e-12)
        assert document['pair_variances']['V_A-B']['value'] == pytest.approx(1.0, abs=0.05)
        assert len(document['cauchy_schwarz']) == 6
        assert np.isnan(stats.variance[0, 0])
        assert all(r < 1e-9 for r in document['identity_residual'].values())

    def test_rejects_empty_region(self):
        samples = np.array([[1.0, 0.0, 2.0, 3.0], [2.0, 0.0, 1.0, 3.0]])
        with pytest.raises(SimulationError):
            region_stats(NumberStatistics(samples))


class TestQuadrantMoments:
    """Statistics read from accumulated ensemble moments"""

    def moments(self, quadrants, masks=None):
        masks = np.ones((4, 2, 2, 2), dtype=bool) if masks is None else masks
        return SimpleNamespace(plan=SimpleNamespace(quadrant_masks=masks),
                               quadrants=quadrants, sample_times=(1e-5, 2e-5))

    def test_empty_quadrant(self, rng):
        masks = np.ones((4, 2, 2, 2), dtype=bool)
        masks[3] = False
        moments = self.moments(rng.poisson(5.0, size=(10, 2, 4)).astype(complex), masks)
        with pytest.raises(SimulationError):
            quadrant_stats(moments)

    def test_series_per_sample(self, rng):
        quadrants = rng.poisson(30.0, size=(400, 2, 4)).astype(complex)
        quadrants[:, 1, 2] = quadrants[:, 1, 0]
        series = quadrant_variance_series(self.moments(quadrants))

        assert [row['time'] for row in series] == [1e-5, 2e-5]
        assert 'V_B-D_se' in series[0]
        # samples are read as normally ordered: Poisson spread is excess noise,
        # identical regions sit exactly at 1
        assert series[0]['V_A-C'] == pytest.approx(2.0, abs=0.35)
        assert series[1]['V_A-C'] == pytest.approx(1.0, abs=1e-9)
        assert series[1]['V_A-C_se'] == pytest.approx(0.0, abs=1e-9)

    def test_quadrant_stats_time(self, rng):
        quadrants = rng.poisson(30.0, size=(50, 2, 4)).astype(complex) + 1.0
        stats = quadrant_stats(self.moments(quadrants), sample=0)
        assert stats.time == 1e-5
        assert stats.means.shape == (4,)
