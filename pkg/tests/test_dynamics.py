"""Tests for the positive-P field integrator"""

import numpy as np
import pytest
from scipy.constants import hbar

from simulation.dynamics import (
    FieldPair, SimConfig, initialize_collision, integrate, max_sim_time, run_trajectory,
    time_bound_warnings, trajectory_rng,
)
from simulation.groundstate import GroundState
from simulation.lattice import ComplexField, Space, build_lattice, to_momentum
from utils.error_formatter import ConfigError, LatticeError

RHO = 1e19


@pytest.fixture
def tiny_lattice():
    return build_lattice((8, 4, 4), (4e-6, 2e-6, 2e-6))


def uniform_pair(lattice, density=RHO):
    psi = np.full(lattice.shape, np.sqrt(density), dtype=np.complex128)
    return FieldPair(ComplexField(psi, Space.POSITION, lattice),
                     ComplexField(np.conj(psi), Space.POSITION, lattice))


def random_pair(lattice, rng, scale=1e9):
    psi = scale * (rng.standard_normal(lattice.shape) + 1j * rng.standard_normal(lattice.shape))
    return FieldPair(ComplexField(psi, Space.POSITION, lattice),
                     ComplexField(np.conj(psi), Space.POSITION, lattice))


def uniform_ground_state(params, lattice, density=RHO):
    return GroundState(density=np.full(lattice.shape, density), mu=0.0,
                       atom_number=density * lattice.volume, energy=0.0,
                       lattice=lattice, params=params)


class TestSimConfig:
    """Validation and sampling schedule"""

    def test_sample_steps_and_times(self, he_params, tiny_lattice):
        config = SimConfig(he_params, tiny_lattice, t_final=1e-5, n_steps=128, n_trajectories=4)
        assert config.sample_steps == (64, 128)
        assert config.sample_times == pytest.approx((5e-6, 1e-5))
        assert config.dt == pytest.approx(1e-5 / 128)
        assert config.u0 == pytest.approx(he_params.u0)

    def test_duplicate_fractions_collapse(self, he_params, tiny_lattice):
        config = SimConfig(he_params, tiny_lattice, 1e-5, 10, 4, sample_fractions=(1.0, 0.0, 1.0))
        assert config.sample_steps == (0, 10)

    @pytest.mark.parametrize("overrides", [
        {'t_final': 0.0},
        {'n_steps': 0},
        {'n_trajectories': 1},
        {'sample_fractions': (0.5, 1.5)},
        {'divergence_factor': -1.0},
    ])
    def test_rejects_bad_settings(self, he_params, tiny_lattice, overrides):
        settings = dict(t_final=1e-5, n_steps=10, n_trajectories=4)
        settings.update(overrides)
        with pytest.raises(ConfigError):
            SimConfig(he_params, tiny_lattice, **settings)

    def test_toy_model_needs_coupling_and_dispersion(self, tiny_lattice):
        with pytest.raises(ConfigError):
            SimConfig(None, tiny_lattice, 1e-5, 10, 4, coupling=1.0)
        config = SimConfig(None, tiny_lattice, 1e-5, 10, 4, coupling=1.0,
                           dispersion=np.zeros(tiny_lattice.shape))
        assert np.all(config.angular_frequencies() == 0.0)

    def test_with_steps_keeps_settings(self, he_params, tiny_lattice):
        config = SimConfig(he_params, tiny_lattice, 1e-5, 10, 4, base_seed=7, noise=False)
        finer = config.with_steps(40)
        assert finer.n_steps == 40
        assert finer.base_seed == 7 and finer.noise is False
        assert finer.dt == pytest.approx(config.dt / 4)


class TestDeterministicEvolution:
    """Noise-free limits with known answers"""

    def test_free_evolution_is_exact(self, he_params, small_lattice, rng):
        pair = random_pair(small_lattice, rng)
        config = SimConfig(he_params, small_lattice, 2e-4, 7, 2, noise=False, coupling=0.0,
                           sample_fractions=(1.0,))
        samples, valid, completed = integrate(pair, config, None)
        assert completed == 7 and bool(valid)

        omega = hbar * small_lattice.k_squared / (2.0 * he_params.mass)
        expected = to_momentum(pair.psi).values * np.exp(-1j * omega * 2e-4)
        assert np.allclose(samples[7].psi.values, expected, rtol=1e-9, atol=1e-6)

    def test_uniform_condensate_phase(self, he_params, tiny_lattice):
        config = SimConfig(he_params, tiny_lattice, 1e-5, 50, 2, noise=False, sample_fractions=(0.0, 1.0))
        samples, _, _ = integrate(uniform_pair(tiny_lattice), config, None)

        amplitude = np.sqrt(RHO * tiny_lattice.volume)
        assert samples[0].psi.values[0, 0, 0] == pytest.approx(amplitude, rel=1e-12)
        expected = amplitude * np.exp(-1j * he_params.u0 * RHO * 1e-5)
        assert samples[50].psi.values[0, 0, 0] == pytest.approx(expected, rel=1e-9)

    def test_mean_field_conserves_number_and_conjugacy(self, he_params, small_lattice, rng):
        pair = random_pair(small_lattice, rng, scale=3e9)
        config = SimConfig(he_params, small_lattice, 1e-5, 100, 2, noise=False, sample_fractions=(1.0,))
        samples, valid, _ = integrate(pair, config, None)
        final = samples[100]

        assert bool(valid)
        assert np.allclose(final.psi_tilde.values, np.conj(final.psi.values), rtol=1e-10, atol=1e-6)
        number = np.sum(final.psi_tilde.values * final.psi.values).real
        assert number == pytest.approx(pair.psi.norm(), rel=1e-8)

    def test_rejects_momentum_space_input(self, he_params, tiny_lattice):
        pair = uniform_pair(tiny_lattice)
        momentum = FieldPair(to_momentum(pair.psi), to_momentum(pair.psi_tilde, adjoint=True))
        config = SimConfig(he_params, tiny_lattice, 1e-6, 2, 2)
        with pytest.raises(LatticeError):
            integrate(momentum, config, None)


class TestStochasticEvolution:
    """Noise, seeding and the divergence guard"""

    def test_trajectory_streams_reproducible(self):
        a = trajectory_rng(3, 5).standard_normal(4)
        b = trajectory_rng(3, 5).standard_normal(4)
        c = trajectory_rng(3, 6).standard_normal(4)
        assert np.array_equal(a, b)
        assert not np.allclose(a, c)

    def test_run_trajectory_deterministic(self, he_params, tiny_lattice):
        config = SimConfig(he_params, tiny_lattice, 2e-6, 20, 4, base_seed=11)
        init = uniform_pair(tiny_lattice)
        first = run_trajectory(init, config, 2)
        again = run_trajectory(init, config, 2)
        other = run_trajectory(init, config, 3)

        assert first.valid and first.steps_completed == 20
        assert np.array_equal(first.samples[20].psi.values, again.samples[20].psi.values)
        assert not np.allclose(first.samples[20].psi.values, other.samples[20].psi.values)
        # the initial pair is left untouched
        assert np.all(init.psi.values == np.sqrt(RHO))

    def test_noise_breaks_conjugacy(self, he_params, tiny_lattice):
        config = SimConfig(he_params, tiny_lattice, 2e-6, 20, 4)
        record = run_trajectory(uniform_pair(tiny_lattice), config, 0)
        final = record.samples[20]
        assert not np.allclose(final.psi_tilde.values, np.conj(final.psi.values))

    def test_mean_number_conserved(self, he_params, tiny_lattice):
        members = 200
        config = SimConfig(he_params, tiny_lattice, 1e-5, 100, members, sample_fractions=(1.0,))
        samples, valid, _ = integrate(uniform_pair(tiny_lattice).batched(members), config,
                                      trajectory_rng(0, 0))
        assert valid.all()

        final = samples[100]
        numbers = np.sum(final.psi_tilde.values * final.psi.values, axis=(1, 2, 3))
        initial = RHO * tiny_lattice.volume
        standard_error = numbers.real.std(ddof=1) / np.sqrt(members)
        assert standard_error > 0
        assert abs(numbers.real.mean() - initial) < 4.0 * standard_error

    def test_divergence_guard(self, he_params, tiny_lattice):
        config = SimConfig(he_params, tiny_lattice, 2e-6, 20, 4, divergence_factor=0.5)
        record = run_trajectory(uniform_pair(tiny_lattice), config, 0)
        assert not record.valid
        assert record.samples == {}
        assert record.steps_completed == 1
        assert record.failure_time == pytest.approx(config.dt)

    def test_guard_zeroes_only_failing_members(self, he_params, tiny_lattice):
        base = uniform_pair(tiny_lattice).batched(3)
        base.psi.values[1] *= 10.0
        base.psi_tilde.values[1] *= 10.0
        config = SimConfig(he_params, tiny_lattice, 1e-6, 4, 3, noise=False,
                           divergence_factor=2.0, sample_fractions=(1.0,))
        samples, valid, completed = integrate(base, config, None, reference_density=RHO)
        assert valid.tolist() == [True, False, True]
        assert completed == 4
        assert np.all(samples[4].psi.values[1] == 0.0)


class TestCollisionSetup:
    """Standing-wave source and simulation-time bound"""

    @pytest.fixture
    def fine_lattice(self):
        return build_lattice((64, 4, 4), (8e-6, 4e-6, 4e-6))

    def test_standing_wave_populations(self, he_params, fine_lattice):
        pair = initialize_collision(uniform_ground_state(he_params, fine_lattice))
        assert np.allclose(pair.psi_tilde.values, np.conj(pair.psi.values))

        psi_k, tilde_k = pair.momentum_amplitudes()
        populations = (tilde_k * psi_k).real
        index = fine_lattice.nearest_k_index(0, he_params.k_r)
        half = 0.5 * RHO * fine_lattice.volume
        assert populations[index, 0, 0] == pytest.approx(half, rel=1e-10)
        assert populations[-index, 0, 0] == pytest.approx(half, rel=1e-10)
        assert populations.sum() == pytest.approx(2.0 * half, rel=1e-10)

    def test_cutoff_below_collision_momentum(self, he_params, small_lattice):
        with pytest.raises(LatticeError):
            initialize_collision(uniform_ground_state(he_params, small_lattice))

    def test_shape_mismatch(self, he_params, fine_lattice, small_lattice):
        with pytest.raises(LatticeError):
            initialize_collision(uniform_ground_state(he_params, small_lattice), lattice=fine_lattice)

    def test_max_sim_time_formula(self, he_params, small_lattice):
        bound = max_sim_time(he_params, small_lattice)
        expected = (2.5 * he_params.mass * small_lattice.cell_volume ** (1 / 3)
                    / (4 * np.pi * hbar * he_params.a00 * 2.5e19 ** (2 / 3)))
        assert bound == pytest.approx(expected, rel=1e-12)
        assert max_sim_time(he_params, small_lattice, peak_density=2.5e19 / 8) == pytest.approx(4 * bound)

    def test_time_bound_warning(self, he_params, small_lattice):
        bound = max_sim_time(he_params, small_lattice)
        short = SimConfig(he_params, small_lattice, 0.5 * bound, 10, 2)
        long = SimConfig(he_params, small_lattice, 2.0 * bound, 10, 2)
        assert time_bound_warnings(short) == []
        assert len(time_bound_warnings(long)) == 1
