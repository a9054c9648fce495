"""
Classical collision-duration model

Two Thomas-Fermi halves of the released cloud move apart at +-v_r while the
cloud expands self-similarly (lambda_i'' = w_i^2 / (lambda_i Lambda),
Lambda = lambda_x lambda_y lambda_z). Atoms scatter at the rate

    dN_sc/dt = 2 * sigma0 * (2 v_r) * int rho_1 rho_2 d^3x,   sigma0 = 8 pi a00^2

and the overlap of the two truncated parabolas reduces to one quadrature
over the collision axis in scaled coordinates.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp

from simulation.groundstate import PhysicalParams, thomas_fermi_radii
from utils.error_formatter import ConfigError, ConvergenceError
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class CollisionModelParams:
    trap_frequencies: Sequence[float]   # rad/s
    radii: Sequence[float]              # Thomas-Fermi radii, m
    peak_density: float                 # density of the trapped cloud, m^-3
    cross_section: float                # sigma0, m^2
    collision_velocity: float
    transfer_efficiency: float = 1.0

    def __post_init__(self):
        if not self.cross_section > 0:
            raise ConfigError("Cross section must be positive")
        if not 0 < self.transfer_efficiency <= 1:
            raise ConfigError("Transfer efficiency must lie in (0, 1]")
        if len(self.radii) != 3 or min(self.radii) <= 0:
            raise ConfigError("Three positive radii required")

    @classmethod
    def from_physical(cls, params: PhysicalParams, peak_density: Optional[float] = None,
                      transfer_efficiency: float = 1.0) -> 'CollisionModelParams':
        rho0 = peak_density if peak_density is not None else params.peak_density
        if rho0 is None:
            raise ConfigError("Collision model needs the peak density")
        mu = params.trapped_interaction * rho0
        return cls(
            trap_frequencies=tuple(params.trap_frequencies),
            radii=tuple(thomas_fermi_radii(params, mu)),
            peak_density=rho0,
            cross_section=8.0 * np.pi * params.a00 ** 2,
            collision_velocity=params.collision_velocity,
            transfer_efficiency=transfer_efficiency,
        )

    @property
    def atom_number(self) -> float:
        """Atoms in the outcoupled cloud."""
        return self.transfer_efficiency * 8.0 * np.pi / 15.0 * self.peak_density * float(np.prod(self.radii))

    @property
    def separation_time(self) -> float:
        return self.radii[0] / self.collision_velocity


def parabola_overlap(s: float) -> float:
    """
    J(s) = int d^3u (1 - |u - s e_x|^2)_+ (1 - |u + s e_x|^2)_+ for unit parabolas
    centred at +-s.
    """
    if s >= 1.0:
        return 0.0

    def slab(z):
        a = 1.0 - (z - s) ** 2
        b = 1.0 - (z + s) ** 2
        c = min(a, b)
        if c <= 0:
            return 0.0
        return np.pi * (a * b * c - 0.5 * (a + b) * c ** 2 + c ** 3 / 3.0)

    value, _ = quad(slab, 0.0, 1.0 - s, epsabs=1e-12, epsrel=1e-10)
    return 2.0 * value


class CollisionDurationModel:
    """Scattered number versus time from the expanding, separating halves."""

    def __init__(self, params: CollisionModelParams):
        self.params = params
        self._solution = None

    def _rhs(self, t, state):
        p = self.params
        lam = state[0:3]
        vel = state[3:6]
        volume = float(np.prod(lam))
        omega = np.asarray(p.trap_frequencies)
        acc = omega ** 2 / (lam * volume)
        rho = 0.5 * p.transfer_efficiency * p.peak_density
        s = p.collision_velocity * t / (lam[0] * p.radii[0])
        overlap = rho ** 2 * float(np.prod(p.radii)) * parabola_overlap(s) / volume
        rate = 2.0 * p.cross_section * 2.0 * p.collision_velocity * overlap
        return np.concatenate([vel, acc, [rate]])

    def _separated(self, t, state):
        p = self.params
        return p.collision_velocity * t / (state[0] * p.radii[0]) - 1.0

    _separated.terminal = True
    _separated.direction = 1

    def solve(self, t_max: Optional[float] = None):
        if self._solution is not None:
            return self._solution
        horizon = t_max or 50.0 * self.params.separation_time
        state0 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        solution = solve_ivp(self._rhs, (0.0, horizon), state0, method='RK45', rtol=1e-8, atol=1e-12,
                             dense_output=True, events=self._separated)
        if not solution.success:
            raise ConvergenceError(f"Collision model integration failed: {solution.message}")
        self._solution = solution
        return solution

    @property
    def end_time(self) -> float:
        return float(self.solve().t[-1])

    def scattered(self, t) -> np.ndarray:
        """N_sc(t); constant after the halves separate."""
        solution = self.solve()
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ConfigError("Time must be non-negative")
        clipped = np.minimum(t, solution.t[-1])
        return solution.sol(clipped)[6]

    @property
    def total_scattered(self) -> float:
        return float(self.solve().y[6, -1])

    def completed_fraction(self, t: float) -> float:
        return float(self.scattered(t)) / self.total_scattered

    def scattered_fraction(self) -> float:
        return self.total_scattered / self.params.atom_number

    def extrapolate(self, measured: float, t: float) -> float:
        """Scale a scattered number observed at time t to the end of the collision."""
        return measured / self.completed_fraction(t)

    def summary(self, times: Sequence[float] = ()) -> Dict[str, float]:
        out = {
            'collision_end_time': self.end_time,
            'N_sc_infinity': self.total_scattered,
            'scattered_fraction_infinity': self.scattered_fraction(),
            'atom_number': self.params.atom_number,
        }
        for t in times:
            out[f'completed_fraction_{t:.3e}s'] = self.completed_fraction(t)
        return out


def collision_duration_model(params: CollisionModelParams, t) -> np.ndarray:
    """N_sc(t) of the classical model."""
    return CollisionDurationModel(params).scattered(t)
