"""
Trapped condensate ground state

Imaginary-time split-step propagation of the Gross-Pitaevskii equation for
the trapped (state 1) cloud, which interacts through a11. The stationary
state is normalized either to a target atom number or, through an outer
iteration on N, to a target peak density.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import fft as sp_fft
from scipy.constants import hbar, atomic_mass

from config import Config
from analysis.fitting import fit_gaussian
from simulation.lattice import ComplexField, Lattice3D, Space, to_momentum, SPATIAL_AXES
from utils.error_formatter import ConfigError, ConvergenceError, LatticeError
from utils.logger import get_logger, log_execution_time

logger = get_logger(__name__)

HELIUM4_MASS = 4.002602 * atomic_mass


@dataclass(frozen=True)
class PhysicalParams:
    """
    Physical inputs, SI units. trap_frequencies are angular (rad/s).
    Exactly one of peak_density / atom_number is set.
    """
    mass: float
    a00: float
    a11: float
    trap_frequencies: Tuple[float, float, float]
    collision_velocity: float
    peak_density: Optional[float] = None
    atom_number: Optional[float] = None
    time_bound_length: str = 'a00'

    def __post_init__(self):
        problems = []
        if (self.peak_density is None) == (self.atom_number is None):
            problems.append("exactly one of peak_density / atom_number must be given")
        if self.mass <= 0:
            problems.append("mass must be positive")
        if self.a00 < 0 or self.a11 < 0:
            problems.append("scattering lengths must be non-negative")
        if len(self.trap_frequencies) != 3 or any(w <= 0 for w in self.trap_frequencies):
            problems.append("three positive trap frequencies required")
        if self.collision_velocity < 0:
            problems.append("collision velocity must be non-negative")
        target = self.peak_density if self.peak_density is not None else self.atom_number
        if target is not None and target <= 0:
            problems.append("density / atom number target must be positive")
        if self.time_bound_length not in ('a00', 'a11'):
            problems.append("time_bound_length must be 'a00' or 'a11'")
        if problems:
            raise ConfigError("Invalid physical parameters", problems=problems)

    @classmethod
    def from_section(cls, section: Dict[str, Any]) -> 'PhysicalParams':
        """Build from the `physical` section of a run config (frequencies in Hz)."""
        return cls(
            mass=float(section['mass']),
            a00=float(section['a00']),
            a11=float(section['a11']),
            trap_frequencies=tuple(2.0 * np.pi * float(f) for f in section['trap_frequencies_hz']),
            collision_velocity=float(section['collision_velocity']),
            peak_density=section.get('peak_density'),
            atom_number=section.get('atom_number'),
            time_bound_length=section.get('time_bound_scattering_length', 'a00'),
        )

    @property
    def k_r(self) -> float:
        return self.mass * self.collision_velocity / hbar

    def coupling(self, scattering_length: float) -> float:
        """U0 = 4 pi hbar a / m (m^3/s)."""
        return 4.0 * np.pi * hbar * scattering_length / self.mass

    @property
    def u0(self) -> float:
        """Coupling of the outcoupled (state 0) clouds."""
        return self.coupling(self.a00)

    @property
    def trapped_interaction(self) -> float:
        """Interaction energy constant g = hbar U0(a11) (J m^3)."""
        return hbar * self.coupling(self.a11)

    @property
    def mean_frequency(self) -> float:
        return float(np.prod(self.trap_frequencies) ** (1.0 / 3.0))

    def oscillator_lengths(self) -> np.ndarray:
        return np.sqrt(hbar / (self.mass * np.asarray(self.trap_frequencies)))


# Thomas-Fermi relations, shared with the analytic estimates

def thomas_fermi_mu_from_number(params: PhysicalParams, atom_number: float) -> float:
    """mu_TF = (hbar w/2)(15 N a / a_ho)^(2/5) with geometric-mean w."""
    omega = params.mean_frequency
    a_ho = np.sqrt(hbar / (params.mass * omega))
    return 0.5 * hbar * omega * (15.0 * atom_number * params.a11 / a_ho) ** 0.4


def thomas_fermi_radii(params: PhysicalParams, mu: float) -> np.ndarray:
    return np.sqrt(2.0 * mu / (params.mass * np.asarray(params.trap_frequencies) ** 2))


def thomas_fermi_number(params: PhysicalParams, peak_density: float) -> float:
    """N for a Thomas-Fermi cloud of the given peak density."""
    mu = params.trapped_interaction * peak_density
    radii = thomas_fermi_radii(params, mu)
    return 8.0 * np.pi / 15.0 * peak_density * float(np.prod(radii))


@dataclass
class GroundState:
    density: np.ndarray
    mu: float
    atom_number: float
    energy: float
    lattice: Lattice3D
    params: PhysicalParams
    sigma_x: float = 0.0
    sigma_yz: float = 0.0
    residual: float = float('nan')
    iterations: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        self.density.setflags(write=False)

    @property
    def amplitude(self) -> np.ndarray:
        return np.sqrt(self.density)

    @property
    def peak_density(self) -> float:
        return float(self.density.max())

    def summary(self) -> Dict[str, float]:
        k_r = self.params.k_r
        return {
            'atom_number': self.atom_number,
            'mu': self.mu,
            'peak_density': self.peak_density,
            'energy_per_atom': self.energy / self.atom_number,
            'sigma_x': self.sigma_x,
            'sigma_yz': self.sigma_yz,
            'sigma_x_over_kr': self.sigma_x / k_r if k_r else float('nan'),
            'sigma_yz_over_kr': self.sigma_yz / k_r if k_r else float('nan'),
            'residual': self.residual,
            'iterations': self.iterations,
        }


class ImaginaryTimeSolver:
    """
    Split-step imaginary-time propagator. The wavefunction stays real, so the
    kinetic step uses real FFTs.
    """

    ENERGY_RISE_TOLERANCE = 1e-12
    MIN_TIME_STEP_FRACTION = 1e-6

    def __init__(self, params: PhysicalParams, lattice: Lattice3D,
                 tolerance: Optional[float] = None, max_iterations: Optional[int] = None,
                 residual_tolerance: Optional[float] = None, time_step: Optional[float] = None,
                 refinement_stages: int = 2):
        self.params = params
        self.lattice = lattice
        self.tolerance = tolerance or Config.GROUNDSTATE_TOLERANCE
        self.max_iterations = max_iterations or Config.GROUNDSTATE_MAX_ITERATIONS
        self.residual_tolerance = residual_tolerance or Config.GROUNDSTATE_RESIDUAL_TOLERANCE
        self.refinement_stages = max(0, int(refinement_stages))
        self.workers = Config.get_fft_workers()

        x, y, z = lattice.x_components
        wx, wy, wz = params.trap_frequencies
        self.potential = 0.5 * params.mass * (wx ** 2 * x ** 2 + wy ** 2 * y ** 2 + wz ** 2 * z ** 2)
        self.g = params.trapped_interaction

        kx = lattice.wavenumbers(0)[:, None, None]
        ky = lattice.wavenumbers(1)[None, :, None]
        kz = 2.0 * np.pi * sp_fft.rfftfreq(lattice.shape[2], d=lattice.spacings[2])[None, None, :]
        self.kinetic = hbar ** 2 * (kx ** 2 + ky ** 2 + kz ** 2) / (2.0 * params.mass)

        self.time_step = time_step or 0.05 * hbar / self._energy_scale()

    def _energy_scale(self) -> float:
        oscillator = 0.5 * hbar * sum(self.params.trap_frequencies)
        if self.params.peak_density is not None:
            mu_tf = self.g * self.params.peak_density
        else:
            mu_tf = thomas_fermi_mu_from_number(self.params, self.params.atom_number)
        return max(mu_tf, oscillator)

    # -- extent checks ---------------------------------------------------

    def expected_radii(self, atom_number: float) -> np.ndarray:
        a_ho = self.params.oscillator_lengths()
        if self.g > 0:
            radii = thomas_fermi_radii(self.params, thomas_fermi_mu_from_number(self.params, atom_number))
            return np.maximum(radii, 2.0 * a_ho)
        return 3.0 * a_ho

    def check_margin(self, atom_number: float):
        margin = Config.GROUNDSTATE_BOUNDARY_MARGIN
        radii = self.expected_radii(atom_number)
        half = 0.5 * np.asarray(self.lattice.box_lengths)
        room = half - radii - margin * self.lattice.spacings
        if np.any(room < 0):
            raise LatticeError("Cloud does not fit the box with the required boundary margin",
                               context={'radii': radii.tolist(), 'half_box': half.tolist(),
                                        'margin_cells': margin})

    def check_boundary(self, density: np.ndarray):
        peak = density.max()
        for axis in range(3):
            edge = np.take(density, 0, axis=axis).max()
            if edge > 1e-3 * peak:
                raise LatticeError("Cloud touches the box boundary",
                                   context={'axis': axis, 'edge_over_peak': float(edge / peak)})

    # -- propagation -----------------------------------------------------

    def _apply_kinetic(self, psi: np.ndarray, factor: np.ndarray) -> np.ndarray:
        spectrum = sp_fft.rfftn(psi, workers=self.workers)
        return sp_fft.irfftn(spectrum * factor, s=psi.shape, workers=self.workers)

    def hamiltonian_terms(self, psi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(K psi, (V + g psi^2) psi)"""
        kinetic = self._apply_kinetic(psi, self.kinetic)
        return kinetic, (self.potential + self.g * psi ** 2) * psi

    def energy(self, psi: np.ndarray) -> Tuple[float, float]:
        """Total energy and chemical potential of a real wavefunction."""
        dv = self.lattice.cell_volume
        kinetic, _ = self.hamiltonian_terms(psi)
        density = psi ** 2
        e_kin = float(np.sum(psi * kinetic) * dv)
        e_pot = float(np.sum(self.potential * density) * dv)
        e_int = float(0.5 * self.g * np.sum(density ** 2) * dv)
        number = float(np.sum(density) * dv)
        return e_kin + e_pot + e_int, (e_kin + e_pot + 2.0 * e_int) / number

    def residual(self, psi: np.ndarray, mu: float) -> float:
        kinetic, local = self.hamiltonian_terms(psi)
        residual = kinetic + local - mu * psi
        return float(np.linalg.norm(residual) / np.linalg.norm(mu * psi))

    def normalize(self, psi: np.ndarray, atom_number: float) -> np.ndarray:
        current = np.sum(psi ** 2) * self.lattice.cell_volume
        return psi * np.sqrt(atom_number / current)

    def step(self, psi: np.ndarray, dtau: float) -> np.ndarray:
        half = -0.5 * dtau / hbar
        psi = psi * np.exp(half * (self.potential + self.g * psi ** 2))
        psi = self._apply_kinetic(psi, np.exp(-dtau * self.kinetic / hbar))
        return psi * np.exp(half * (self.potential + self.g * psi ** 2))

    def initial_guess(self, atom_number: float) -> np.ndarray:
        x, y, z = self.lattice.x_components
        a_ho = self.params.oscillator_lengths()
        gaussian = np.exp(-0.5 * ((x / a_ho[0]) ** 2 + (y / a_ho[1]) ** 2 + (z / a_ho[2]) ** 2))
        if self.g > 0:
            mu = thomas_fermi_mu_from_number(self.params, atom_number)
            psi = np.sqrt(np.clip(mu - self.potential, 0.0, None) / self.g)
            psi = psi + 1e-3 * psi.max() * gaussian
        else:
            psi = gaussian
        return self.normalize(psi, atom_number)

    def relax(self, psi: np.ndarray, atom_number: float) -> Tuple[np.ndarray, float, float, int]:
        """
        Relax at fixed atom number. The time step is halved whenever the
        energy rises and reduced fourfold between refinement stages.

        Returns:
            (psi, energy, mu, iterations)
        """
        psi = self.normalize(psi, atom_number)
        energy, mu = self.energy(psi)
        dtau = self.time_step
        floor = self.time_step * self.MIN_TIME_STEP_FRACTION
        iterations = 0

        for stage in range(self.refinement_stages + 1):
            converged = False
            while iterations < self.max_iterations:
                candidate = self.normalize(self.step(psi, dtau), atom_number)
                cand_energy, cand_mu = self.energy(candidate)
                iterations += 1

                if cand_energy - energy > self.ENERGY_RISE_TOLERANCE * abs(energy):
                    dtau *= 0.5
                    if dtau < floor:
                        raise ConvergenceError("Imaginary-time step collapsed while energy kept rising",
                                               context={'stage': stage, 'iterations': iterations})
                    continue

                change = abs(cand_energy - energy) / abs(cand_energy)
                psi, energy, mu = candidate, cand_energy, cand_mu
                if change < self.tolerance:
                    converged = True
                    break

            if not converged:
                raise ConvergenceError("Ground state did not converge",
                                       context={'max_iterations': self.max_iterations,
                                                'stage': stage, 'atom_number': atom_number})
            dtau *= 0.25

        return psi, energy, mu, iterations


def source_momentum_widths(ground_state: GroundState, lattice: Optional[Lattice3D] = None) -> Tuple[float, float]:
    """
    Gaussian rms widths of |FT(sqrt(rho0))|^2 along the three axes through
    k = 0; the two transverse widths are averaged into sigma_yz.
    """
    lattice = lattice or ground_state.lattice
    amplitude = ComplexField(ground_state.amplitude.astype(np.complex128), Space.POSITION, lattice)
    spectrum = np.abs(to_momentum(amplitude).values) ** 2

    widths = []
    lines = (spectrum[:, 0, 0], spectrum[0, :, 0], spectrum[0, 0, :])
    for axis, line in enumerate(lines):
        k = sp_fft.fftshift(lattice.wavenumbers(axis))
        fit = fit_gaussian(k, sp_fft.fftshift(line), center=0.0)
        widths.append(fit.width)

    return widths[0], 0.5 * (widths[1] + widths[2])


@log_execution_time()
def solve_ground_state(params: PhysicalParams, lattice: Lattice3D,
                       tolerance: Optional[float] = None, **solver_options) -> GroundState:
    """
    Ground state of the trapped cloud on `lattice`.

    Targets params.atom_number directly, or params.peak_density through an
    outer secant iteration on N (log-log, bracketed, falling back to
    geometric bisection) until the peak is within
    Config.GROUNDSTATE_TARGET_TOLERANCE of the target.
    """
    solver = ImaginaryTimeSolver(params, lattice, tolerance=tolerance, **solver_options)

    if params.atom_number is not None:
        number = float(params.atom_number)
    else:
        number = thomas_fermi_number(params, params.peak_density) if solver.g > 0 else 1.0
        if solver.g == 0:
            a_ho = params.oscillator_lengths()
            number = params.peak_density * np.pi ** 1.5 * float(np.prod(a_ho))

    solver.check_margin(number)
    logger.info(f"Solving ground state on {lattice.shape} lattice, initial N={number:.4g}")

    psi = solver.initial_guess(number)
    history: List[Dict[str, float]] = []
    total_iterations = 0

    if params.peak_density is None:
        psi, energy, mu, its = solver.relax(psi, number)
        total_iterations += its
    else:
        target = float(params.peak_density)
        low = high = None
        slope_default = 0.4 if solver.g > 0 else 1.0
        for outer in range(Config.GROUNDSTATE_MAX_OUTER_ITERATIONS):
            psi, energy, mu, its = solver.relax(psi, number)
            total_iterations += its
            peak = float(np.max(psi ** 2))
            history.append({'atom_number': number, 'peak_density': peak, 'mu': mu})
            error = (peak - target) / target
            logger.debug(f"outer {outer}: N={number:.6g} peak={peak:.6g} rel_error={error:.2e}")
            if abs(error) < Config.GROUNDSTATE_TARGET_TOLERANCE:
                break

            if peak < target:
                low = number if low is None else max(low, number)
            else:
                high = number if high is None else min(high, number)

            slope = slope_default
            if len(history) >= 2:
                prev, last = history[-2], history[-1]
                dn = np.log(last['atom_number'] / prev['atom_number'])
                if abs(dn) > 1e-12:
                    slope = np.log(last['peak_density'] / prev['peak_density']) / dn
            slope = float(np.clip(slope, 0.1, 1.5))
            proposal = number * (target / peak) ** (1.0 / slope)
            if low is not None and high is not None and not (low < proposal < high):
                proposal = np.sqrt(low * high)

            psi = psi * np.sqrt(proposal / number)
            number = float(proposal)
        else:
            raise ConvergenceError("Peak-density targeting did not converge",
                                   context={'target': target, 'last_peak': history[-1]['peak_density']})

    density = psi ** 2
    solver.check_boundary(density)
    residual = solver.residual(psi, mu)
    if residual > solver.residual_tolerance:
        raise ConvergenceError("Ground-state residual above tolerance",
                               context={'residual': residual, 'tolerance': solver.residual_tolerance})

    state = GroundState(
        density=density,
        mu=mu,
        atom_number=float(np.sum(density) * lattice.cell_volume),
        energy=energy,
        lattice=lattice,
        params=params,
        residual=residual,
        iterations=total_iterations,
        history=history,
    )
    state.sigma_x, state.sigma_yz = source_momentum_widths(state, lattice)

    logger.success(f"Ground state: N={state.atom_number:.5g}, mu={mu:.4e} J, "
                   f"peak={state.peak_density:.4e} m^-3, residual={residual:.2e}")
    return state
