"""
Momentum-space observables

MomentPlan fixes, before a run, which bins and lags the trajectories reduce
onto; the ensemble then only keeps per-bin density sums and a few scalar
samples per trajectory. Everything below momentum_density works on the
finished EnsembleMoments and is a pure function of it.

Correlation conventions on the grid:
    CL numerator(l) = sum_{k in D} n(k) n(k + l e_i)
    BB numerator(l) = sum_{k in D} n(k) n(-k + l e_i)
with n(k) = Psi-tilde(k) Psi(k) per trajectory, so trajectory averages are
normally ordered. Denominators use the same sums over mean densities.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft as sp_fft

from analysis.fitting import GaussianFit, fit_gaussian
from config import Config
from simulation.lattice import Lattice3D, index_negated
from utils.error_formatter import FitError, SimulationError
from utils.logger import get_logger

logger = get_logger(__name__)

AXES = ('x', 'y', 'z')
KINDS = ('bb', 'cl')
QUADRANTS = ('A', 'B', 'C', 'D')


@dataclass(eq=False)
class MomentPlan:
    """Bin masks and lag sets the trajectories are reduced onto."""
    lattice: Lattice3D
    k_r: float
    scattered_exclusion: float = 0.99
    axial_mask: float = 0.8
    shell: float = 0.28
    lag_bins: Tuple[int, int, int] = (8, 3, 3)

    def __post_init__(self):
        self.lag_bins = tuple(int(l) for l in self.lag_bins)
        if self.k_r <= 0:
            raise SimulationError("Moment plan needs a positive k_r")
        if len(self.lag_bins) != 3 or any(l < 0 for l in self.lag_bins):
            raise SimulationError("lag_bins must be three non-negative integers")

    def lags(self, axis: int) -> np.ndarray:
        span = self.lag_bins[axis]
        return np.arange(-span, span + 1)

    def lag_wavenumbers(self, axis: int) -> np.ndarray:
        return self.lags(axis) * self.lattice.momentum_spacings[axis]

    @cached_property
    def scattered_mask(self) -> np.ndarray:
        kx = self.lattice.k_components[0]
        return np.broadcast_to(np.abs(kx) <= self.scattered_exclusion * self.k_r, self.lattice.shape)

    @cached_property
    def shell_mask(self) -> np.ndarray:
        """|k_x| <= axial_mask k_r and |1 - k^2/k_r^2| < shell, Nyquist planes excluded."""
        kx = self.lattice.k_components[0]
        radial = np.abs(1.0 - self.lattice.k_squared / self.k_r ** 2) < self.shell
        axial = np.abs(kx) <= self.axial_mask * self.k_r
        return radial & axial & ~self.lattice.nyquist_mask()

    @property
    def domain(self) -> np.ndarray:
        """Correlation domain D."""
        return self.shell_mask

    @cached_property
    def quadrant_masks(self) -> np.ndarray:
        """
        (4, nx, ny, nz) masks for quadrants A, B, C, D of the (k_x, k_y)
        plane, split by the diagonals: A faces +k_x, B +k_y, C -k_x, D -k_y.
        """
        kx, ky, _ = self.lattice.k_components
        phi = np.broadcast_to(np.arctan2(ky, kx), self.lattice.shape)
        quarter = np.pi / 4.0
        in_a = (phi >= -quarter) & (phi < quarter)
        in_b = (phi >= quarter) & (phi < 3 * quarter)
        in_d = (phi >= -3 * quarter) & (phi < -quarter)
        in_c = ~(in_a | in_b | in_d)
        shell = self.shell_mask
        return np.stack([in_a & shell, in_b & shell, in_c & shell, in_d & shell])

    def describe(self) -> Dict:
        return {
            'k_r': self.k_r,
            'scattered_exclusion': self.scattered_exclusion,
            'axial_mask': self.axial_mask,
            'shell': self.shell,
            'lag_bins': list(self.lag_bins),
            'domain_bins': int(self.domain.sum()),
        }

    def contribution(self, psi_k: np.ndarray, tilde_k: np.ndarray) -> 'SampleContribution':
        """Reduce one trajectory's momentum amplitudes at one sample time."""
        n = tilde_k * psi_k
        domain = self.domain
        masked = np.where(domain, n, 0.0)
        negated = index_negated(n)

        bb, cl = [], []
        for axis in range(3):
            spatial_axis = axis - 3
            bb.append(np.array([np.sum(masked * np.roll(negated, int(l), axis=spatial_axis))
                                for l in self.lags(axis)]))
            cl.append(np.array([np.sum(masked * np.roll(n, -int(l), axis=spatial_axis))
                                for l in self.lags(axis)]))

        quadrants = np.array([np.sum(n[q]) for q in self.quadrant_masks])
        return SampleContribution(
            density=n,
            mismatch=tilde_k - np.conj(psi_k),
            psi=psi_k,
            total=complex(np.sum(n)),
            scattered=complex(np.sum(n[self.scattered_mask])),
            quadrants=quadrants,
            bb=bb,
            cl=cl,
        )


@dataclass
class SampleContribution:
    density: np.ndarray
    mismatch: np.ndarray
    psi: np.ndarray
    total: complex
    scattered: complex
    quadrants: np.ndarray
    bb: List[np.ndarray]
    cl: List[np.ndarray]


# ---------------------------------------------------------------------------
# densities and counts


def z_ratios(values: np.ndarray, standard_error: np.ndarray, scale: float = 0.0) -> np.ndarray:
    """
    |value| / s.e. per bin. Where the s.e. vanishes, a value above rounding
    (1e-9 * scale) counts as infinitely significant.
    """
    values = np.abs(np.asarray(values, dtype=float))
    standard_error = np.asarray(standard_error, dtype=float)
    out = np.where(values > 1e-9 * scale, np.inf, 0.0)
    np.divide(values, standard_error, out=out, where=standard_error > 0)
    return out


@dataclass
class ConsistencyCheck:
    """Bin-wise z-scores of an ensemble quantity that vanishes on average."""
    components: int
    max_ratio: float
    outliers: int
    threshold: float
    relative_offset: float = 0.0

    @classmethod
    def from_ratios(cls, ratios: np.ndarray, threshold: Optional[float] = None,
                    relative_offset: float = 0.0) -> 'ConsistencyCheck':
        threshold = Config.SIGMA_THRESHOLD if threshold is None else float(threshold)
        ratios = np.asarray(ratios, dtype=float).ravel()
        return cls(components=int(ratios.size),
                   max_ratio=float(ratios.max()) if ratios.size else 0.0,
                   outliers=int(np.count_nonzero(ratios > threshold)),
                   threshold=threshold,
                   relative_offset=float(relative_offset))

    @property
    def outlier_fraction(self) -> float:
        return self.outliers / self.components if self.components else 0.0

    def passed(self, tolerance: Optional[float] = None) -> bool:
        # a few bins beyond 3 s.e. are expected by chance
        tolerance = Config.CONSISTENCY_OUTLIER_FRACTION if tolerance is None else tolerance
        return self.outlier_fraction <= tolerance

    def to_dict(self) -> Dict[str, float]:
        return {
            'components': self.components,
            'max_ratio': self.max_ratio,
            'outliers': self.outliers,
            'outlier_fraction': self.outlier_fraction,
            'relative_offset': self.relative_offset,
            'passed': self.passed(),
        }


@dataclass
class MomentumDensity:
    values: np.ndarray
    standard_error: np.ndarray
    imaginary_residue: np.ndarray
    lattice: Lattice3D
    time: float
    imaginary_standard_error: Optional[np.ndarray] = None

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def hermiticity_check(self, threshold: Optional[float] = None) -> ConsistencyCheck:
        """Im n(k) against its own standard error on every bin."""
        se = self.standard_error if self.imaginary_standard_error is None else self.imaginary_standard_error
        scale = float(np.max(np.abs(self.values))) if self.values.size else 0.0
        return ConsistencyCheck.from_ratios(z_ratios(self.imaginary_residue, se, scale), threshold)

    def hermiticity_ratio(self) -> float:
        """Largest |Im n| / s.e. over bins."""
        return self.hermiticity_check().max_ratio


def momentum_density(moments, sample: int = -1) -> MomentumDensity:
    """n(k) = Re<Psi-tilde(k) Psi(k)> at one sample time of the ensemble."""
    mean = moments.density_mean(sample)
    return MomentumDensity(
        values=mean.real,
        standard_error=moments.density_standard_error(sample),
        imaginary_residue=mean.imag,
        lattice=moments.plan.lattice,
        time=moments.sample_times[sample],
        imaginary_standard_error=moments.density_imag_standard_error(sample),
    )


def count_scattered(density: MomentumDensity, k_r: float, exclusion: float = 0.99,
                    total: Optional[float] = None) -> Tuple[float, float]:
    """Atoms with |k_x| <= exclusion k_r and their fraction of the total."""
    kx = density.lattice.k_components[0]
    mask = np.broadcast_to(np.abs(kx) <= exclusion * k_r, density.lattice.shape)
    scattered = float(density.values[mask].sum())
    total = density.total if total is None else total
    return scattered, scattered / total if total else float('nan')


def scattered_number(moments, sample: int = -1) -> Tuple[float, float]:
    """Ensemble N_sc with its standard error from the per-trajectory samples."""
    values = moments.scattered[:, sample].real
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def total_number(moments, sample: int = -1) -> Tuple[float, float]:
    values = moments.totals[:, sample].real
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


# ---------------------------------------------------------------------------
# halo profile


@dataclass
class HaloProfile:
    k: np.ndarray
    density: np.ndarray
    standard_error: np.ndarray
    counts: np.ndarray
    k_r: float
    fit: Optional[GaussianFit] = None

    @property
    def k0(self) -> float:
        return self.fit.center if self.fit else float('nan')

    @property
    def width(self) -> float:
        return self.fit.width if self.fit else float('nan')

    def min_significance(self) -> float:
        ok = self.standard_error > 0
        if not ok.any():
            return float('inf')
        return float(np.min(self.density[ok] / self.standard_error[ok]))


def radial_profile(density: MomentumDensity, k_r: float, axial_mask: float = 0.8,
                   bin_width: float = 0.02, fit_range: Tuple[float, float] = (0.6, 1.4),
                   sloped_background: bool = False) -> HaloProfile:
    """
    Angle-averaged density in spherical shells of width bin_width k_r over
    |k_x| <= axial_mask k_r, with a Gaussian fit over fit_range (k_r units).
    """
    lattice = density.lattice
    kx = lattice.k_components[0]
    mask = np.broadcast_to(np.abs(kx) <= axial_mask * k_r, lattice.shape) & ~lattice.nyquist_mask()
    radius = np.sqrt(lattice.k_squared)[mask] / k_r
    values = density.values[mask]
    errors = density.standard_error[mask]

    edges = np.arange(0.0, radius.max() + bin_width, bin_width)
    index = np.digitize(radius, edges) - 1
    counts = np.bincount(index, minlength=len(edges) - 1)[:len(edges) - 1]
    sums = np.bincount(index, weights=values, minlength=len(edges) - 1)[:len(edges) - 1]
    variances = np.bincount(index, weights=errors ** 2, minlength=len(edges) - 1)[:len(edges) - 1]

    filled = counts > 0
    centers = 0.5 * (edges[:-1] + edges[1:])[filled]
    counts = counts[filled]
    mean = sums[filled] / counts
    se = np.sqrt(variances[filled]) / counts

    profile = HaloProfile(centers * k_r, mean, se, counts, k_r)
    window = (centers >= fit_range[0]) & (centers <= fit_range[1])
    try:
        profile.fit = fit_gaussian(centers[window] * k_r, mean[window],
                                   background='linear' if sloped_background else 'none',
                                   p0={'center': k_r}, sigma=se[window])
    except FitError as e:
        logger.warning(f"Halo profile fit failed: {e.message}")
    return profile


# ---------------------------------------------------------------------------
# averaged pair correlations


@dataclass
class CorrelationCurve:
    axis: str
    kind: str
    delta_k: np.ndarray
    g2: np.ndarray
    standard_error: np.ndarray
    fit: Optional[GaussianFit] = None
    dropped: int = 0

    @property
    def peak(self) -> float:
        """g2(0) from the fit, falling back to the zero-lag value."""
        if self.fit is not None:
            return 1.0 + self.fit.amplitude
        zero = np.argmin(np.abs(self.delta_k))
        return float(self.g2[zero])

    @property
    def zero_lag(self) -> Tuple[float, float]:
        zero = int(np.argmin(np.abs(self.delta_k)))
        return float(self.g2[zero]), float(self.standard_error[zero])

    @property
    def width(self) -> float:
        return self.fit.width if self.fit else float('nan')


def correlation_denominator(mean_density: np.ndarray, plan: MomentPlan, kind: str, axis: int) -> np.ndarray:
    masked = np.where(plan.domain, mean_density, 0.0)
    partner = index_negated(mean_density) if kind == 'bb' else mean_density
    out = []
    for l in plan.lags(axis):
        shift = int(l) if kind == 'bb' else -int(l)
        out.append(np.sum(masked * np.roll(partner, shift, axis=axis - 3)))
    return np.asarray(out)


def g2_average(moments, kind: str, axis: int, sample: int = -1, fit: bool = True) -> CorrelationCurve:
    """Domain-averaged BB or CL correlation along one axis with a Gaussian fit of g2 - 1."""
    if kind not in KINDS:
        raise SimulationError(f"Unknown correlation kind '{kind}'")
    plan = moments.plan
    if not plan.domain.any():
        raise SimulationError("Correlation domain is empty", context=plan.describe())

    samples = (moments.bb if kind == 'bb' else moments.cl)[axis][:, sample, :].real
    numerator = samples.mean(axis=0)
    numerator_se = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    denominator = correlation_denominator(moments.density_mean(sample).real, plan, kind, axis)

    floor = Config.G2_MIN_DENOMINATOR * max(np.max(np.abs(denominator)), 1e-300)
    keep = np.abs(denominator) > floor
    dropped = int((~keep).sum())
    if dropped:
        logger.warning(f"g2 {kind}/{AXES[axis]}: dropped {dropped} lag(s) with vanishing denominator")

    delta_k = plan.lag_wavenumbers(axis)[keep]
    g2 = numerator[keep] / denominator[keep]
    se = numerator_se[keep] / np.abs(denominator[keep])
    curve = CorrelationCurve(AXES[axis], kind, delta_k, g2, se, dropped=dropped)

    if fit and delta_k.size >= 2:
        try:
            curve.fit = fit_gaussian(delta_k, g2 - 1.0, center=0.0, sigma=se)
        except FitError as e:
            logger.warning(f"g2 {kind}/{AXES[axis]} fit failed: {e.message}")
    return curve


def correlation_set(moments, sample: int = -1) -> Dict[str, CorrelationCurve]:
    """All six curves keyed 'bb_x', ..., 'cl_z'."""
    return {f"{kind}_{AXES[axis]}": g2_average(moments, kind, axis, sample)
            for kind in KINDS for axis in range(3)}


# ---------------------------------------------------------------------------
# slices


@dataclass
class DensitySlice:
    plane: str
    k1: np.ndarray
    k2: np.ndarray
    values: np.ndarray


def density_slice(density: MomentumDensity, plane: str = 'kz0') -> DensitySlice:
    """Centred cut of n(k) through k_z = 0 ('kz0') or k_x = 0 ('kx0')."""
    lattice = density.lattice
    if plane == 'kz0':
        values, axes = density.values[:, :, 0], (0, 1)
    elif plane == 'kx0':
        values, axes = density.values[0, :, :], (1, 2)
    else:
        raise SimulationError(f"Unknown slice plane '{plane}'")
    return DensitySlice(
        plane=plane,
        k1=sp_fft.fftshift(lattice.wavenumbers(axes[0])),
        k2=sp_fft.fftshift(lattice.wavenumbers(axes[1])),
        values=sp_fft.fftshift(values),
    )
