"""
Closed-form estimates for the scattering halo and its correlations.

Widths are in 1/m unless a function says otherwise; most callers divide by
k_r for reporting.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.constants import hbar, atomic_mass
from scipy.optimize import brentq

from simulation.groundstate import PhysicalParams
from utils.error_formatter import ConfigError, SimulationError
from utils.logger import get_logger

logger = get_logger(__name__)

GAUSSIAN_MODE_FACTOR = (2.0 * np.pi) ** 1.5

# measured values quoted for comparison in prediction tables
EXPERIMENTAL_HALO_WIDTH = 0.067          # k_r units
EXPERIMENTAL_SCATTERED_FRACTION = 0.05

# 23Na collision used to check the stimulated-regime width; the peak density
# is set so that 4 pi a rho0 / k_r^2 = 0.096 at v_r = 2 cm/s
SODIUM_MASS = 22.98977 * atomic_mass
SODIUM_REFERENCE = {
    'mass': SODIUM_MASS,
    'a00': 2.75e-9,
    'collision_velocity': 0.02,
    'peak_density': 1.456e20,
}


@dataclass(frozen=True)
class UniformPumpParams:
    """Undepleted uniform source: pair-production rate gbar (1/s), k_r, mass."""
    gbar: float
    k_r: float
    mass: float

    def __post_init__(self):
        if not self.gbar > 0:
            raise ConfigError("gbar must be positive", context={'gbar': self.gbar})
        if not self.k_r > 0 or not self.mass > 0:
            raise ConfigError("k_r and mass must be positive")

    @classmethod
    def from_physical(cls, params: PhysicalParams, peak_density: Optional[float] = None) -> 'UniformPumpParams':
        rho0 = peak_density if peak_density is not None else params.peak_density
        if rho0 is None:
            raise ConfigError("Peak density needed for gbar")
        return cls(gbar=pair_rate(params.a00, rho0, params.mass), k_r=params.k_r, mass=params.mass)

    def detuning(self, k) -> np.ndarray:
        """Delta_k = (hbar / 2m)(k^2 - k_r^2), rad/s."""
        k = np.asarray(k, dtype=float)
        return hbar / (2.0 * self.mass) * (k ** 2 - self.k_r ** 2)

    def wavenumber(self, detuning: float) -> float:
        """Inverse of detuning() on the k > 0 branch."""
        k_sq = self.k_r ** 2 + 2.0 * self.mass * detuning / hbar
        if k_sq < 0:
            raise SimulationError("Detuning below the k = 0 limit", context={'detuning': detuning})
        return float(np.sqrt(k_sq))

    def time_for(self, gbar_t: float) -> float:
        return gbar_t / self.gbar


def pair_rate(a00: float, peak_density: float, mass: float) -> float:
    """gbar = 2 U0 rho0 = 8 pi hbar a00 rho0 / m."""
    return 8.0 * np.pi * hbar * a00 * peak_density / mass


def gaussian_ansatz_widths(sigma: float) -> Tuple[float, float]:
    """(sigma_BB, sigma_CL) = (sqrt(2) sigma, 2 sigma) for a Gaussian source of width sigma."""
    if not sigma > 0:
        raise ConfigError("Source width must be positive", context={'sigma': sigma})
    return np.sqrt(2.0) * sigma, 2.0 * sigma


def halo_width_spontaneous(mass: float, k_r: float, duration: float) -> float:
    """Energy-time width m / (hbar k_r dt) of a halo formed over `duration`."""
    if not duration > 0:
        raise ConfigError("Collision duration must be positive", context={'duration': duration})
    width = mass / (hbar * k_r * duration)
    if width > 0.3 * k_r:
        logger.warning(f"Spontaneous halo width {width / k_r:.3f} k_r is not small compared to k_r")
    return width


def halo_width_stimulated(a00: float, peak_density: float, k_r: float) -> float:
    """Long-time stimulated width, delta_k / k_r = 4 pi a00 rho0 / k_r^2 (dimensionless)."""
    if a00 <= 0 or peak_density <= 0 or k_r <= 0:
        raise ConfigError("Stimulated width needs positive a00, rho0 and k_r")
    return 4.0 * np.pi * a00 * peak_density / k_r ** 2


def _gain_factor(x_sq: np.ndarray) -> np.ndarray:
    """sinh(x)/x as a function of x^2, continued to sin(|x|)/|x| for x^2 < 0."""
    x_sq = np.asarray(x_sq, dtype=float)
    out = np.empty_like(x_sq)
    small = np.abs(x_sq) < 1e-6
    out[small] = 1.0 + x_sq[small] / 6.0 + x_sq[small] ** 2 / 120.0
    grow = (x_sq > 0) & ~small
    root = np.sqrt(x_sq[grow])
    out[grow] = np.sinh(root) / root
    osc = (x_sq < 0) & ~small
    root = np.sqrt(-x_sq[osc])
    out[osc] = np.sin(root) / root
    return out


def pump_occupation(k, t: float, pump: UniformPumpParams) -> np.ndarray:
    """
    Mode occupation under an undepleted pump,
    n_k = gbar^2/(gbar^2 - Delta_k^2) sinh^2(sqrt(gbar^2 - Delta_k^2) t),
    written as (gbar t)^2 [sinh(x)/x]^2 so the |Delta_k| = gbar crossing is regular.
    """
    if t < 0:
        raise ConfigError("Time must be non-negative", context={'t': t})
    delta = pump.detuning(k)
    x_sq = (pump.gbar ** 2 - delta ** 2) * t ** 2
    return (pump.gbar * t) ** 2 * _gain_factor(x_sq) ** 2


def _occupation_ratio(detuning: float, gbar_t: float, gbar: float) -> float:
    x_sq = (1.0 - (detuning / gbar) ** 2) * gbar_t ** 2
    peak = _gain_factor(np.array([gbar_t ** 2]))[0]
    return float((_gain_factor(np.array([x_sq]))[0] / peak) ** 2)


def occupation_width(gbar_t: float, pump: UniformPumpParams) -> float:
    """
    Gaussian-equivalent width of n_k at time gbar_t / gbar: the half width at
    half maximum in k, averaged over both sides of k_r, divided by
    sqrt(2 ln 2).
    """
    if not gbar_t > 0:
        raise ConfigError("gbar t must be positive")
    gbar = pump.gbar

    def excess(detuning):
        return _occupation_ratio(detuning, gbar_t, gbar) - 0.5

    # first half-maximum crossing, located on a grid then refined
    upper = gbar * max(4.0, 4.0 / gbar_t)
    grid = np.linspace(0.0, upper, 4001)
    values = np.array([excess(d) for d in grid])
    crossing = np.nonzero(values < 0)[0]
    if crossing.size == 0:
        raise SimulationError("No half-maximum crossing found", context={'gbar_t': gbar_t})
    i = crossing[0]
    half_detuning = brentq(excess, grid[i - 1], grid[i], xtol=1e-12 * gbar)

    k_hi = pump.wavenumber(half_detuning)
    k_lo = pump.wavenumber(-half_detuning)
    hwhm = 0.5 * ((k_hi - pump.k_r) + (pump.k_r - k_lo))
    return hwhm / np.sqrt(2.0 * np.log(2.0))


def mode_volume(sigma_x: float, sigma_yz: float, beta: float = GAUSSIAN_MODE_FACTOR) -> float:
    return beta * sigma_x * sigma_yz ** 2


def shell_volume(k_r: float, halo_width: float) -> float:
    """Volume of a Gaussian shell of radius k_r and rms width halo_width."""
    return 4.0 * np.pi * np.sqrt(2.0 * np.pi) * k_r ** 2 * halo_width


def mode_counting(sigma_x: float, sigma_yz: float, k_r: float, halo_width: float,
                  beta: float = GAUSSIAN_MODE_FACTOR) -> Tuple[float, float]:
    """(V_m, N_m): volume of one scattering mode and number of modes in the halo."""
    if min(sigma_x, sigma_yz, k_r, halo_width, beta) <= 0:
        raise ConfigError("Mode counting needs positive widths and beta")
    v_m = mode_volume(sigma_x, sigma_yz, beta)
    return v_m, shell_volume(k_r, halo_width) / v_m


def bb_peak_estimate(n_modes: float, n_scattered: float) -> float:
    """g2_BB(0) = 1 + N_m / N_sc."""
    if n_scattered <= 0:
        raise ConfigError("Scattered number must be positive")
    return 1.0 + n_modes / n_scattered


def mode_occupancy(n_scattered: float, n_modes: float) -> float:
    return n_scattered / n_modes


def minimum_halo_width(sigma: float, stimulated_width: Optional[float] = None) -> Dict[str, float]:
    """
    Lower bound on the halo width set by the source width sigma, and the
    quadrature sum sqrt(stimulated^2 + sigma^2) when a stimulated width is given.
    """
    result = {'lower_bound': float(sigma)}
    if stimulated_width is not None:
        result['combined'] = float(np.hypot(stimulated_width, sigma))
    return result


def prediction_table(params: PhysicalParams, duration: float, sigma_x: float, sigma_yz: float,
                     halo_width: Optional[float] = None, n_scattered: Optional[float] = None,
                     beta: float = GAUSSIAN_MODE_FACTOR, peak_density: Optional[float] = None) -> Dict[str, float]:
    """
    Every estimate for one configuration, widths in k_r units. sigma_* and
    halo_width are given in k_r units; halo_width defaults to the
    spontaneous estimate.
    """
    k_r = params.k_r
    rho0 = peak_density if peak_density is not None else params.peak_density
    spont = halo_width_spontaneous(params.mass, k_r, duration) / k_r
    bb, cl = gaussian_ansatz_widths(1.0)
    table = {
        'k_r': k_r,
        'duration': duration,
        'delta_k_spont': spont,
        'sigma_x': sigma_x,
        'sigma_yz': sigma_yz,
        'sigma_x_bb_ansatz': bb * sigma_x,
        'sigma_yz_bb_ansatz': bb * sigma_yz,
        'sigma_x_cl_ansatz': cl * sigma_x,
        'sigma_yz_cl_ansatz': cl * sigma_yz,
        'experimental_delta_k': EXPERIMENTAL_HALO_WIDTH,
        'experimental_fraction': EXPERIMENTAL_SCATTERED_FRACTION,
    }
    if rho0 is not None and params.a00 > 0:
        stim = halo_width_stimulated(params.a00, rho0, k_r)
        pump = UniformPumpParams.from_physical(params, rho0)
        table.update({
            'delta_k_stim': stim,
            'delta_k_combined': minimum_halo_width(sigma_yz, stim)['combined'],
            'gbar': pump.gbar,
            'gbar_t': pump.gbar * duration,
        })
    width = halo_width if halo_width is not None else spont
    v_m, n_m = mode_counting(sigma_x, sigma_yz, 1.0, width, beta)
    table.update({'halo_width_for_modes': width, 'V_m': v_m, 'N_m': n_m})
    if n_scattered:
        table.update({
            'N_sc': n_scattered,
            'occupancy': mode_occupancy(n_scattered, n_m),
            'g2_bb_estimate': bb_peak_estimate(n_m, n_scattered),
        })
    return table
