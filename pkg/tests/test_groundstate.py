"""Tests for the imaginary-time ground-state solver"""

import numpy as np
import pytest
from scipy.constants import hbar

from simulation.groundstate import (
    HELIUM4_MASS, ImaginaryTimeSolver, PhysicalParams, solve_ground_state,
    thomas_fermi_mu_from_number, thomas_fermi_number, thomas_fermi_radii,
)
from simulation.lattice import build_lattice
from utils.error_formatter import ConfigError, LatticeError

TRAP_HZ = (1000.0, 1500.0, 1500.0)


def trap(frequencies_hz):
    return tuple(2.0 * np.pi * f for f in frequencies_hz)


@pytest.fixture
def cube():
    return build_lattice((32, 32, 32), (16e-6, 16e-6, 16e-6))


def ideal_gas(**target):
    return PhysicalParams(mass=HELIUM4_MASS, a00=0.0, a11=0.0, trap_frequencies=trap(TRAP_HZ),
                          collision_velocity=0.092, **target)


class TestPhysicalParams:
    """Parameter validation and derived quantities"""

    def test_recoil_wavenumber(self, he_params):
        assert he_params.k_r == pytest.approx(5.8e6, rel=0.01)

    def test_requires_exactly_one_target(self):
        with pytest.raises(ConfigError):
            PhysicalParams(HELIUM4_MASS, 5.3e-9, 7.51e-9, trap(TRAP_HZ), 0.092,
                           peak_density=2.5e19, atom_number=1e5)
        with pytest.raises(ConfigError):
            PhysicalParams(HELIUM4_MASS, 5.3e-9, 7.51e-9, trap(TRAP_HZ), 0.092)

    @pytest.mark.parametrize("field, value", [("mass", -1.0), ("a00", -1e-9), ("time_bound_length", "a22")])
    def test_rejects_bad_values(self, he_params, field, value):
        values = dict(mass=he_params.mass, a00=he_params.a00, a11=he_params.a11,
                      trap_frequencies=he_params.trap_frequencies,
                      collision_velocity=he_params.collision_velocity, peak_density=2.5e19)
        values[field] = value
        with pytest.raises(ConfigError):
            PhysicalParams(**values)

    def test_from_section_converts_hertz(self):
        params = PhysicalParams.from_section({
            'mass': HELIUM4_MASS, 'a00': 5.3e-9, 'a11': 7.51e-9,
            'trap_frequencies_hz': [376.0, 1150.0, 1150.0], 'collision_velocity': 0.092,
            'peak_density': 2.5e19, 'atom_number': None,
        })
        assert params.trap_frequencies[0] == pytest.approx(2 * np.pi * 376.0)
        assert params.time_bound_length == 'a00'


class TestThomasFermi:
    """Closed-form Thomas-Fermi relations"""

    def test_number_and_mu_consistent(self, he_params):
        number = thomas_fermi_number(he_params, 2.5e19)
        mu = thomas_fermi_mu_from_number(he_params, number)
        assert mu == pytest.approx(he_params.trapped_interaction * 2.5e19, rel=1e-10)

    def test_radii_scale_with_frequency(self, he_params):
        radii = thomas_fermi_radii(he_params, he_params.trapped_interaction * 2.5e19)
        ratio = radii[0] / radii[1]
        assert ratio == pytest.approx(1150.0 / 376.0, rel=1e-10)
        assert radii[1] == pytest.approx(4.77e-6, rel=0.01)


class TestIdealGas:
    """Non-interacting cloud: the exact answer is the oscillator ground state"""

    def test_chemical_potential(self, cube):
        state = solve_ground_state(ideal_gas(atom_number=1000.0), cube)
        expected = 0.5 * hbar * sum(trap(TRAP_HZ))
        assert state.mu == pytest.approx(expected, rel=1e-3)
        assert state.atom_number == pytest.approx(1000.0, rel=1e-10)
        assert state.residual < 1e-3

    def test_source_widths(self, cube):
        params = ideal_gas(atom_number=1000.0)
        state = solve_ground_state(params, cube)
        a_ho = params.oscillator_lengths()
        assert state.sigma_x == pytest.approx(1.0 / (np.sqrt(2.0) * a_ho[0]), rel=0.01)
        assert state.sigma_yz == pytest.approx(1.0 / (np.sqrt(2.0) * a_ho[1]), rel=0.01)
        summary = state.summary()
        assert summary['sigma_x_over_kr'] == pytest.approx(state.sigma_x / params.k_r)

    def test_peak_density_target(self, cube):
        state = solve_ground_state(ideal_gas(peak_density=1e18), cube)
        assert state.peak_density == pytest.approx(1e18, rel=2e-3)
        assert state.history

    def test_density_is_read_only(self, cube):
        state = solve_ground_state(ideal_gas(atom_number=10.0), cube)
        with pytest.raises(ValueError):
            state.density[0, 0, 0] = 1.0


class TestInteractingCloud:
    """Repulsive cloud in an isotropic trap"""

    @pytest.fixture
    def wide(self):
        return build_lattice((40, 40, 40), (20e-6, 20e-6, 20e-6))

    @pytest.fixture
    def params(self):
        return PhysicalParams(mass=HELIUM4_MASS, a00=5.3e-9, a11=7.51e-9,
                              trap_frequencies=trap((1000.0, 1000.0, 1000.0)),
                              collision_velocity=0.092, peak_density=2e19)

    def test_peak_density_and_thomas_fermi_scale(self, params, wide):
        state = solve_ground_state(params, wide)
        assert state.peak_density == pytest.approx(2e19, rel=2e-3)
        ratio = state.atom_number / thomas_fermi_number(params, 2e19)
        assert 0.6 < ratio < 1.4
        assert state.mu > 0.5 * hbar * sum(params.trap_frequencies)
        assert state.energy / state.atom_number < state.mu

    def test_density_symmetric(self, params, wide):
        state = solve_ground_state(params, wide)
        centred = state.density[1:, 1:, 1:]
        assert np.allclose(centred, centred[::-1, :, :], rtol=1e-6, atol=1e-6 * state.peak_density)

    def test_box_too_small(self, params):
        tight = build_lattice((16, 16, 16), (8e-6, 8e-6, 8e-6))
        with pytest.raises(LatticeError):
            solve_ground_state(params, tight)

    def test_margin_check_uses_expected_radii(self, params, wide):
        solver = ImaginaryTimeSolver(params, wide)
        solver.check_margin(1000.0)
        with pytest.raises(LatticeError):
            solver.check_margin(1e7)


@pytest.mark.slow
class TestReferenceClouds:
    """Ground states at the reference trap (47 Hz axial)"""

    @pytest.fixture
    def lattice(self):
        return build_lattice((512, 40, 40), (252e-6, 20e-6, 20e-6))

    def reference(self, a00, a11):
        return PhysicalParams(mass=HELIUM4_MASS, a00=a00, a11=a11,
                              trap_frequencies=trap((47.0, 1150.0, 1150.0)),
                              collision_velocity=0.092, peak_density=2.5e19)

    def test_main_atom_number_and_widths(self, lattice):
        params = self.reference(5.3e-9, 7.51e-9)
        state = solve_ground_state(params, lattice)
        assert state.atom_number == pytest.approx(9.84e4, rel=0.02)
        assert state.sigma_x / params.k_r == pytest.approx(0.0025, rel=0.1)
        assert state.sigma_yz / params.k_r == pytest.approx(0.055, rel=0.1)

    def test_halved_scattering_lengths(self, lattice):
        state = solve_ground_state(self.reference(2.65e-9, 3.75e-9), lattice)
        assert state.atom_number == pytest.approx(3.5e4, rel=0.05)
