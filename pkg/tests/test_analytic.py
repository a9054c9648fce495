"""Tests for the closed-form halo and correlation estimates"""

import numpy as np
import pytest
from scipy.constants import hbar

from analysis.analytic import (
    GAUSSIAN_MODE_FACTOR, SODIUM_REFERENCE, UniformPumpParams, bb_peak_estimate,
    gaussian_ansatz_widths, halo_width_spontaneous, halo_width_stimulated, minimum_halo_width,
    mode_counting, mode_occupancy, occupation_width, pair_rate, prediction_table, pump_occupation,
)
from simulation.groundstate import HELIUM4_MASS
from utils.error_formatter import ConfigError


@pytest.fixture
def pump(he_params):
    return UniformPumpParams.from_physical(he_params)


class TestHaloWidths:
    """Spontaneous, stimulated and combined halo widths"""

    def test_gaussian_ansatz(self):
        bb, cl = gaussian_ansatz_widths(1.0)
        assert bb == pytest.approx(np.sqrt(2.0), rel=1e-15)
        assert cl == 2.0
        with pytest.raises(ConfigError):
            gaussian_ansatz_widths(0.0)

    def test_spontaneous_width(self, he_params):
        width = halo_width_spontaneous(he_params.mass, he_params.k_r, 25e-6)
        assert width / he_params.k_r == pytest.approx(0.075, rel=0.01)
        with pytest.raises(ConfigError):
            halo_width_spontaneous(he_params.mass, he_params.k_r, 0.0)

    def test_stimulated_width_helium(self, he_params):
        width = halo_width_stimulated(he_params.a00, 2.5e19, he_params.k_r)
        assert width == pytest.approx(0.05, rel=0.02)

    def test_stimulated_width_sodium(self):
        ref = SODIUM_REFERENCE
        k_r = ref['mass'] * ref['collision_velocity'] / hbar
        width = halo_width_stimulated(ref['a00'], ref['peak_density'], k_r)
        assert width == pytest.approx(0.096, rel=0.02)

    def test_quadrature_sum(self):
        widths = minimum_halo_width(0.055, 0.05)
        assert widths['combined'] == pytest.approx(0.074, rel=0.02)
        assert widths['lower_bound'] == 0.055
        assert 'combined' not in minimum_halo_width(0.055)


class TestModeCounting:
    """Mode volume, mode number and the BB peak estimate"""

    def test_main_scenario(self):
        v_m, n_m = mode_counting(0.0025, 0.055, 1.0, 0.10)
        assert v_m == pytest.approx(GAUSSIAN_MODE_FACTOR * 0.0025 * 0.055 ** 2)
        assert n_m == pytest.approx(26400, rel=0.05)
        assert mode_occupancy(1750.0, n_m) == pytest.approx(0.066, rel=0.05)
        assert bb_peak_estimate(n_m, 1750.0) == pytest.approx(16.0, rel=0.05)

    def test_mode_number_independent_of_units(self, he_params):
        k_r = he_params.k_r
        _, scaled = mode_counting(0.0025, 0.055, 1.0, 0.10)
        _, physical = mode_counting(0.0025 * k_r, 0.055 * k_r, k_r, 0.10 * k_r)
        assert physical == pytest.approx(scaled, rel=1e-12)

    def test_beta_scales_inverse(self):
        _, default = mode_counting(0.0025, 0.055, 1.0, 0.10)
        _, unit = mode_counting(0.0025, 0.055, 1.0, 0.10, beta=1.0)
        assert unit == pytest.approx(default * GAUSSIAN_MODE_FACTOR)

    @pytest.mark.parametrize("args", [(0.0, 0.055, 1.0, 0.1), (0.0025, 0.055, 1.0, -0.1)])
    def test_rejects_non_positive(self, args):
        with pytest.raises(ConfigError):
            mode_counting(*args)

    def test_bb_estimate_needs_scattered_atoms(self):
        with pytest.raises(ConfigError):
            bb_peak_estimate(100.0, 0.0)


class TestUndepletedPump:
    """Occupation of halo modes under a constant source"""

    def test_pair_rate(self, he_params, pump):
        assert pump.gbar == pytest.approx(pair_rate(he_params.a00, 2.5e19, he_params.mass))
        assert pump.gbar == pytest.approx(5.3e4, rel=0.01)

    def test_times(self, pump):
        # quoted as roughly 20 and 140 microseconds
        assert pump.time_for(1.0) == pytest.approx(20e-6, rel=0.06)
        assert pump.time_for(7.0) == pytest.approx(140e-6, rel=0.06)

    def test_resonant_growth(self, pump):
        t = pump.time_for(3.0)
        occupation = pump_occupation(pump.k_r, t, pump)
        assert occupation == pytest.approx(np.sinh(3.0) ** 2, rel=1e-10)

    def test_regular_at_gain_edge(self, pump):
        # |Delta_k| = gbar exactly
        k = pump.wavenumber(pump.gbar)
        t = pump.time_for(2.0)
        assert pump_occupation(k, t, pump) == pytest.approx(4.0, rel=1e-6)
        assert np.isfinite(pump_occupation(np.linspace(0.9, 1.1, 101) * pump.k_r, t, pump)).all()

    def test_detuning_inverse(self, pump):
        k = 1.03 * pump.k_r
        assert pump.wavenumber(float(pump.detuning(k))) == pytest.approx(k, rel=1e-12)

    @pytest.mark.parametrize("gbar_t, expected", [(1.0, 0.12), (7.0, 0.027)])
    def test_occupation_width(self, pump, gbar_t, expected):
        assert occupation_width(gbar_t, pump) / pump.k_r == pytest.approx(expected, rel=0.1)

    def test_width_narrows_with_time(self, pump):
        widths = [occupation_width(g, pump) for g in (1.0, 3.0, 7.0)]
        assert widths[0] > widths[1] > widths[2]

    def test_invalid_pump(self):
        with pytest.raises(ConfigError):
            UniformPumpParams(gbar=0.0, k_r=1.0, mass=HELIUM4_MASS)


class TestPredictionTable:
    """Every estimate for the main configuration"""

    def test_main_table(self, he_params):
        table = prediction_table(he_params, 25e-6, 0.0025, 0.055, halo_width=0.10, n_scattered=1750.0)
        assert table['delta_k_spont'] == pytest.approx(0.075, rel=0.01)
        assert table['delta_k_stim'] == pytest.approx(0.05, rel=0.02)
        assert table['delta_k_combined'] == pytest.approx(0.074, rel=0.02)
        assert table['N_m'] == pytest.approx(26400, rel=0.05)
        assert table['g2_bb_estimate'] == pytest.approx(16.0, rel=0.05)
        assert table['sigma_yz_bb_ansatz'] == pytest.approx(np.sqrt(2.0) * 0.055)
        assert table['gbar_t'] == pytest.approx(table['gbar'] * 25e-6)

    def test_defaults_to_spontaneous_width(self, he_params):
        table = prediction_table(he_params, 25e-6, 0.0025, 0.055)
        assert table['halo_width_for_modes'] == table['delta_k_spont']
        assert 'occupancy' not in table
