"""Desk-scale collision runs checked against the analytic estimates"""

import pytest

from processors.run_processor import RunProcessor
from run_config import preset

pytestmark = pytest.mark.slow


@pytest.fixture(scope='module')
def main_summary(tmp_path_factory):
    output = tmp_path_factory.mktemp('main')
    return RunProcessor(preset('main'), output_dir=str(output), progress=False).run(resume=False)


@pytest.fixture(scope='module')
def half_time_summary(tmp_path_factory):
    output = tmp_path_factory.mktemp('half-time')
    return RunProcessor(preset('half-time'), output_dir=str(output), progress=False).run(resume=False)


class TestMainCollision:
    """Main scenario, 400 trajectories on the 256x36x36 lattice"""

    def test_ensemble_mostly_valid(self, main_summary):
        trajectories = main_summary['trajectories']
        assert trajectories['valid'] >= 400 * 0.9
        assert main_summary['N_sc'] > 0

    def test_collinear_hbt_peak(self, main_summary):
        assert main_summary['g2_cl_0'] == pytest.approx(2.0, abs=0.3)

    def test_back_to_back_peak_near_mode_estimate(self, main_summary):
        ratio = main_summary['g2_bb_over_estimate']
        assert 0.5 <= ratio <= 2.0

    def test_opposite_quadrants_squeezed(self, main_summary):
        value, se = main_summary['V_A-C'], main_summary['V_A-C_se']
        assert value < 1.0 - 3.0 * se

    def test_neighbouring_quadrants_not_squeezed(self, main_summary):
        value, se = main_summary['V_A-B'], main_summary['V_A-B_se']
        assert value > 1.0 - 3.0 * se

    def test_variance_identity(self, main_summary):
        assert main_summary['variance_identity_residual'] < 1e-10

    def test_halo_width_near_energy_time_estimate(self, main_summary):
        assert main_summary['delta_k'] == pytest.approx(main_summary['delta_k_spont'], rel=0.35)

    def test_scattered_number_grows_linearly(self, main_summary):
        growth = main_summary['N_sc_growth']
        assert growth['time_ratio'] == pytest.approx(2.0)
        assert growth['N_sc_ratio'] == pytest.approx(2.0, rel=0.15)

    def test_correlation_width_ratio(self, main_summary):
        assert 1.0 <= main_summary['sigma_cl_over_bb_yz'] <= 1.4

    def test_mean_field_consistent(self, main_summary):
        for row in main_summary['samples']:
            assert row['consistency']['mean_field']['passed'], row['time']
            assert row['consistency']['hermiticity']['passed'], row['time']


class TestHalfTimeCollision:
    """Main scenario stopped halfway"""

    def test_half_the_scattered_atoms(self, main_summary, half_time_summary):
        assert main_summary['N_sc'] / half_time_summary['N_sc'] == pytest.approx(2.0, rel=0.15)

    def test_halo_broader_at_shorter_time(self, main_summary, half_time_summary):
        assert half_time_summary['delta_k'] > main_summary['delta_k']
