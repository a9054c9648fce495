"""Tests for the periodic lattice and its spectral transforms"""

import numpy as np
import pytest

from simulation.lattice import (
    ComplexField, Space, build_lattice, degenerate_lattice, index_negated, momentum_grid,
    to_momentum, to_position,
)
from utils.error_formatter import LatticeError


def random_field(lattice, rng, batch=()):
    shape = tuple(batch) + lattice.shape
    return ComplexField(rng.standard_normal(shape) + 1j * rng.standard_normal(shape), Space.POSITION, lattice)


class TestLatticeGeometry:
    """Grid spacings, wavenumbers and validation"""

    def test_spacings_and_volume(self, small_lattice):
        assert np.allclose(small_lattice.spacings, [2.5e-6, 2e-6, 2e-6])
        assert small_lattice.volume == pytest.approx(40e-6 * 16e-6 * 16e-6)
        assert small_lattice.cell_volume * small_lattice.n_points == pytest.approx(small_lattice.volume)

    def test_nyquist_bin_is_negative(self, small_lattice):
        k = small_lattice.wavenumbers(0)
        assert k[0] == 0.0
        assert k[8] == pytest.approx(-small_lattice.k_max[0])
        assert np.allclose(np.diff(np.sort(k)), small_lattice.momentum_spacings[0])

    def test_positions_centred(self, small_lattice):
        x = small_lattice.positions(0)
        assert x[8] == 0.0
        assert x[0] == pytest.approx(-20e-6)

    @pytest.mark.parametrize("points", [(15, 8, 8), (16, 2, 8), (16, 8)])
    def test_rejects_bad_points(self, points):
        with pytest.raises(LatticeError):
            build_lattice(points, (1.0, 1.0, 1.0))

    @pytest.mark.parametrize("lengths", [(1.0, -1.0, 1.0), (1.0, 0.0, 1.0), (1.0, float('inf'), 1.0)])
    def test_rejects_bad_lengths(self, lengths):
        with pytest.raises(LatticeError):
            build_lattice((8, 8, 8), lengths)

    def test_degenerate_lattice_allows_single_points(self):
        lattice = degenerate_lattice((3, 1, 1), (1.0, 1.0, 1.0))
        assert lattice.shape == (3, 1, 1)
        assert np.allclose(lattice.wavenumbers(0), 2 * np.pi * np.array([0, 1, -1]))

    def test_nyquist_mask_planes(self, small_lattice):
        mask = small_lattice.nyquist_mask()
        assert mask[8, 0, 0] and mask[0, 4, 0] and mask[0, 0, 4]
        assert not mask[1, 1, 1]

    def test_momentum_grid_matches_components(self, small_lattice):
        grid = momentum_grid(small_lattice)
        assert grid.shape == small_lattice.shape + (3,)
        assert np.allclose(np.sum(grid ** 2, axis=-1), small_lattice.k_squared)


class TestTransforms:
    """Normalisation and inverses of the momentum transform"""

    def test_parseval(self, small_lattice, rng):
        field = random_field(small_lattice, rng)
        momentum = to_momentum(field)
        assert np.sum(np.abs(momentum.values) ** 2) == pytest.approx(field.norm(), rel=1e-10)
        assert momentum.norm() == pytest.approx(field.norm(), rel=1e-10)

    @pytest.mark.parametrize("adjoint", [False, True])
    def test_round_trip(self, small_lattice, rng, adjoint):
        field = random_field(small_lattice, rng)
        back = to_position(to_momentum(field, adjoint=adjoint), adjoint=adjoint)
        assert np.allclose(back.values, field.values, atol=1e-12)

    def test_adjoint_is_conjugate_of_forward(self, small_lattice, rng):
        field = random_field(small_lattice, rng)
        forward = to_momentum(ComplexField(np.conj(field.values), Space.POSITION, small_lattice))
        adjoint = to_momentum(field, adjoint=True)
        assert np.allclose(adjoint.values, np.conj(forward.values), atol=1e-12)

    def test_plane_wave_lands_in_one_bin(self, small_lattice):
        x = small_lattice.x_components[0]
        k = small_lattice.wavenumbers(0)[3]
        psi = np.broadcast_to(np.exp(1j * k * x), small_lattice.shape)
        momentum = to_momentum(ComplexField(psi, Space.POSITION, small_lattice))
        populations = np.abs(momentum.values) ** 2
        assert populations[3, 0, 0] == pytest.approx(small_lattice.volume)
        assert populations.sum() - populations[3, 0, 0] == pytest.approx(0.0, abs=1e-20)

    def test_batched_fields_transform_independently(self, small_lattice, rng):
        batch = random_field(small_lattice, rng, batch=(3,))
        momentum = to_momentum(batch)
        single = to_momentum(ComplexField(batch.values[1], Space.POSITION, small_lattice))
        assert np.allclose(momentum.values[1], single.values)

    def test_wrong_space_rejected(self, small_lattice, rng):
        field = random_field(small_lattice, rng)
        with pytest.raises(LatticeError):
            to_position(field)
        with pytest.raises(LatticeError):
            ComplexField(np.zeros((4, 4, 4)), Space.POSITION, small_lattice)


class TestIndexNegation:
    """-k partner lookup"""

    def test_negated_wavenumbers(self, small_lattice):
        kx = np.broadcast_to(small_lattice.k_components[0], small_lattice.shape)
        negated = index_negated(kx)
        off_nyquist = ~small_lattice.nyquist_mask()
        assert np.allclose(negated[off_nyquist], -kx[off_nyquist])

    def test_involution(self, small_lattice, rng):
        values = rng.standard_normal(small_lattice.shape)
        assert np.array_equal(index_negated(index_negated(values)), values)

    def test_origin_fixed(self, small_lattice, rng):
        values = rng.standard_normal(small_lattice.shape)
        assert index_negated(values)[0, 0, 0] == values[0, 0, 0]
