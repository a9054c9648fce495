"""
Computational lattice and spectral transforms

Lattice3D is the periodic box every field lives on. Momentum amplitudes use
the normalization

    a(k) = sqrt(dV / n_total) * sum_x Psi(x) exp(-i k.x)

so that sum_k |a(k)|^2 = sum_x |Psi(x)|^2 dV, i.e. momentum-bin populations
add up to the atom number. Grid sizes are even and the Nyquist bin of each
axis carries the negative frequency, which makes the -k partner of a bin the
index-negated bin.
"""

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sp_fft

from config import Config
from utils.error_formatter import LatticeError

SPATIAL_AXES = (-3, -2, -1)
MIN_POINTS = 4


class Space(Enum):
    POSITION = "position"
    MOMENTUM = "momentum"


@dataclass(frozen=True)
class Lattice3D:
    """Immutable periodic grid; safe to share between trajectory workers."""
    points: Tuple[int, int, int]
    box_lengths: Tuple[float, float, float]

    @cached_property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.points)

    @cached_property
    def spacings(self) -> np.ndarray:
        return np.asarray(self.box_lengths, dtype=float) / np.asarray(self.points, dtype=float)

    @cached_property
    def momentum_spacings(self) -> np.ndarray:
        return 2.0 * np.pi / np.asarray(self.box_lengths, dtype=float)

    @cached_property
    def k_max(self) -> np.ndarray:
        return np.pi / self.spacings

    @cached_property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @cached_property
    def volume(self) -> float:
        return float(np.prod(self.box_lengths))

    @cached_property
    def n_points(self) -> int:
        return int(np.prod(self.shape))

    def positions(self, axis: int) -> np.ndarray:
        """Cell positions along one axis, centred on the origin."""
        n = self.shape[axis]
        return (np.arange(n) - n // 2) * self.spacings[axis]

    def wavenumbers(self, axis: int) -> np.ndarray:
        """Signed wavenumbers along one axis in transform order."""
        return 2.0 * np.pi * sp_fft.fftfreq(self.shape[axis], d=self.spacings[axis])

    @cached_property
    def k_components(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        kx, ky, kz = (self.wavenumbers(i) for i in range(3))
        return (kx[:, None, None], ky[None, :, None], kz[None, None, :])

    @cached_property
    def k_squared(self) -> np.ndarray:
        kx, ky, kz = self.k_components
        return kx ** 2 + ky ** 2 + kz ** 2

    @cached_property
    def x_components(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        x, y, z = (self.positions(i) for i in range(3))
        return (x[:, None, None], y[None, :, None], z[None, None, :])

    def nearest_k_index(self, axis: int, k: float) -> int:
        return int(np.argmin(np.abs(self.wavenumbers(axis) - k)))

    def nyquist_mask(self) -> np.ndarray:
        """True on bins that lie on a Nyquist plane of any even axis."""
        mask = np.zeros(self.shape, dtype=bool)
        for axis, n in enumerate(self.shape):
            if n % 2 == 0 and n > 1:
                index = [slice(None)] * 3
                index[axis] = n // 2
                mask[tuple(index)] = True
        return mask

    def describe(self) -> dict:
        return {
            'points': list(self.shape),
            'box_lengths': [float(v) for v in self.box_lengths],
            'spacings': self.spacings.tolist(),
            'momentum_spacings': self.momentum_spacings.tolist(),
            'k_max': self.k_max.tolist(),
            'cell_volume': self.cell_volume,
        }


def _check_lengths(box_lengths: Sequence[float]) -> Tuple[float, float, float]:
    if len(box_lengths) != 3:
        raise LatticeError(f"Expected three box lengths, got {len(box_lengths)}")
    lengths = tuple(float(v) for v in box_lengths)
    if any(not np.isfinite(v) or v <= 0 for v in lengths):
        raise LatticeError("Box lengths must be positive and finite", context={'box_lengths': lengths})
    return lengths


def build_lattice(points_per_axis: Sequence[int], box_lengths: Sequence[float]) -> Lattice3D:
    """Collision lattice: every axis even and at least MIN_POINTS."""
    if len(points_per_axis) != 3:
        raise LatticeError(f"Expected three point counts, got {len(points_per_axis)}")
    points = tuple(int(n) for n in points_per_axis)
    for n in points:
        if n < MIN_POINTS or n % 2:
            raise LatticeError(f"Points per axis must be even and >= {MIN_POINTS}",
                               context={'points': points})
    return Lattice3D(points, _check_lengths(box_lengths))


def degenerate_lattice(points_per_axis: Sequence[int], box_lengths: Sequence[float]) -> Lattice3D:
    """
    Few-site lattice used to run the stochastic integrator on a handful of
    plane-wave modes. Any positive size is accepted.
    """
    points = tuple(int(n) for n in points_per_axis)
    if len(points) != 3 or any(n < 1 for n in points):
        raise LatticeError("Degenerate lattice needs three positive point counts",
                           context={'points': points})
    return Lattice3D(points, _check_lengths(box_lengths))


class ComplexField:
    """
    Complex samples on a lattice. Leading dimensions in front of the three
    spatial axes are allowed and are treated as a batch of independent fields.
    """

    __slots__ = ('values', 'space', 'lattice')

    def __init__(self, values: np.ndarray, space: Space, lattice: Lattice3D):
        values = np.asarray(values, dtype=np.complex128)
        if values.ndim < 3 or values.shape[-3:] != lattice.shape:
            raise LatticeError("Field shape does not match lattice",
                               context={'field_shape': values.shape, 'lattice_shape': lattice.shape})
        self.values = values
        self.space = space
        self.lattice = lattice

    def copy(self) -> 'ComplexField':
        return ComplexField(self.values.copy(), self.space, self.lattice)

    def norm(self) -> np.ndarray:
        """Atom number carried by the field (per batch member)."""
        weight = self.lattice.cell_volume if self.space is Space.POSITION else 1.0
        return np.sum(np.abs(self.values) ** 2, axis=SPATIAL_AXES) * weight


def to_momentum(field: ComplexField, adjoint: bool = False,
                workers: Optional[int] = None) -> ComplexField:
    """
    Position -> momentum amplitudes. adjoint=True transforms a field that
    stands for the creation operator (Psi-tilde), which picks up the opposite
    phase convention so that the pair (Psi-tilde(k), Psi(k)) keeps representing
    (a_k^dagger, a_k).
    """
    if field.space is not Space.POSITION:
        raise LatticeError("to_momentum expects a position-space field")
    workers = workers or Config.get_fft_workers()
    scale = np.sqrt(field.lattice.cell_volume)
    transform = sp_fft.ifftn if adjoint else sp_fft.fftn
    values = transform(field.values, axes=SPATIAL_AXES, norm='ortho', workers=workers) * scale
    return ComplexField(values, Space.MOMENTUM, field.lattice)


def to_position(field: ComplexField, adjoint: bool = False,
                workers: Optional[int] = None) -> ComplexField:
    if field.space is not Space.MOMENTUM:
        raise LatticeError("to_position expects a momentum-space field")
    workers = workers or Config.get_fft_workers()
    scale = 1.0 / np.sqrt(field.lattice.cell_volume)
    transform = sp_fft.fftn if adjoint else sp_fft.ifftn
    values = transform(field.values, axes=SPATIAL_AXES, norm='ortho', workers=workers) * scale
    return ComplexField(values, Space.POSITION, field.lattice)


def momentum_grid(lattice: Lattice3D) -> np.ndarray:
    """k-vector of every bin, shape (nx, ny, nz, 3), in transform order."""
    kx, ky, kz = lattice.k_components
    grid = np.empty(lattice.shape + (3,), dtype=float)
    grid[..., 0] = kx
    grid[..., 1] = ky
    grid[..., 2] = kz
    return grid


def index_negated(values: np.ndarray) -> np.ndarray:
    """values[-k] on the grid: index j -> (-j) mod n along each spatial axis."""
    out = values
    for axis in SPATIAL_AXES:
        out = np.roll(np.flip(out, axis=axis), 1, axis=axis)
    return out
