"""
Positive-P field integrator

Propagates the pair (Psi, Psi-tilde) of the outcoupled clouds with a
symmetric split step: exact kinetic half step in momentum space, the
number-conserving nonlinear phase plus Ito/Euler-Maruyama noise in position
space, kinetic half step again. Noise amplitudes are taken from the state
entering the nonlinear substep.

Lattice noise: dW ~ N(0, dt/dV) per site per step, independent for the two
fields. Every trajectory draws from its own stream,
default_rng(SeedSequence(base_seed, spawn_key=(trajectory_id,))), so a
trajectory is reproducible on its own regardless of which worker ran it.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.constants import hbar

from config import Config
from simulation.groundstate import GroundState, PhysicalParams
from simulation.lattice import (ComplexField, Lattice3D, Space, SPATIAL_AXES,
                                to_momentum, to_position)
from utils.error_formatter import ConfigError, LatticeError
from utils.logger import get_logger

logger = get_logger(__name__)


def trajectory_rng(base_seed: int, trajectory_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(base_seed), spawn_key=(int(trajectory_id),)))


@dataclass
class FieldPair:
    """Psi and Psi-tilde on one lattice. Leading batch dimensions allowed."""
    psi: ComplexField
    psi_tilde: ComplexField
    time: float = 0.0
    trajectory_id: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if self.psi.lattice != self.psi_tilde.lattice or self.psi.space is not self.psi_tilde.space:
            raise LatticeError("Psi and Psi-tilde must share lattice and space")
        if self.psi.values.shape != self.psi_tilde.values.shape:
            raise LatticeError("Psi and Psi-tilde shapes differ",
                               context={'psi': self.psi.values.shape,
                                        'psi_tilde': self.psi_tilde.values.shape})

    @property
    def lattice(self) -> Lattice3D:
        return self.psi.lattice

    def copy(self) -> 'FieldPair':
        return FieldPair(self.psi.copy(), self.psi_tilde.copy(), self.time,
                         self.trajectory_id, self.rng_seed)

    def batched(self, size: int) -> 'FieldPair':
        """Stack `size` copies of an unbatched pair along a new leading axis."""
        reps = (size,) + (1,) * self.psi.values.ndim
        return FieldPair(
            ComplexField(np.tile(self.psi.values[None], reps), self.psi.space, self.lattice),
            ComplexField(np.tile(self.psi_tilde.values[None], reps), self.psi_tilde.space, self.lattice),
            self.time, self.trajectory_id, self.rng_seed,
        )

    def momentum_amplitudes(self) -> Tuple[np.ndarray, np.ndarray]:
        """(Psi(k), Psi-tilde(k)): stochastic counterparts of (a_k, a_k^dagger)."""
        if self.psi.space is Space.MOMENTUM:
            return self.psi.values, self.psi_tilde.values
        return (to_momentum(self.psi).values,
                to_momentum(self.psi_tilde, adjoint=True).values)


@dataclass(eq=False)
class SimConfig:
    params: Optional[PhysicalParams]
    lattice: Lattice3D
    t_final: float
    n_steps: int
    n_trajectories: int
    base_seed: int = 0
    noise: bool = True
    sample_fractions: Sequence[float] = (0.5, 1.0)
    divergence_factor: float = field(default_factory=lambda: Config.DIVERGENCE_FACTOR)
    reference_density: Optional[float] = None
    coupling: Optional[float] = None
    dispersion: Optional[np.ndarray] = None

    def __post_init__(self):
        problems = []
        if not self.t_final > 0:
            problems.append(f"t_final must be positive, got {self.t_final}")
        if int(self.n_steps) < 1:
            problems.append(f"steps must be >= 1, got {self.n_steps}")
        if int(self.n_trajectories) < 2:
            problems.append(f"at least two trajectories required, got {self.n_trajectories}")
        if not self.divergence_factor > 0:
            problems.append("divergence factor must be positive")
        fractions = [float(f) for f in self.sample_fractions]
        if not fractions or any(f < 0 or f > 1 for f in fractions):
            problems.append("sample fractions must lie in [0, 1]")
        if self.dispersion is not None and np.shape(self.dispersion) != self.lattice.shape:
            problems.append("dispersion override must match the lattice shape")
        if self.params is None and (self.coupling is None or self.dispersion is None):
            problems.append("without physical parameters both coupling and dispersion must be given")
        if problems:
            raise ConfigError("Invalid simulation settings", problems=problems)
        self.n_steps = int(self.n_steps)
        self.n_trajectories = int(self.n_trajectories)
        self.sample_fractions = tuple(sorted(set(fractions)))

    @property
    def dt(self) -> float:
        return self.t_final / self.n_steps

    @property
    def u0(self) -> float:
        return self.coupling if self.coupling is not None else self.params.u0

    @property
    def sample_steps(self) -> Tuple[int, ...]:
        return tuple(sorted({int(round(f * self.n_steps)) for f in self.sample_fractions}))

    @property
    def sample_times(self) -> Tuple[float, ...]:
        return tuple(s * self.dt for s in self.sample_steps)

    def angular_frequencies(self) -> np.ndarray:
        if self.dispersion is not None:
            return np.asarray(self.dispersion, dtype=float)
        return hbar * self.lattice.k_squared / (2.0 * self.params.mass)

    def with_steps(self, n_steps: int) -> 'SimConfig':
        return SimConfig(self.params, self.lattice, self.t_final, n_steps, self.n_trajectories,
                         self.base_seed, self.noise, self.sample_fractions, self.divergence_factor,
                         self.reference_density, self.coupling, self.dispersion)


class FieldIntegrator:
    """One split step of the positive-P equations for a (possibly batched) pair."""

    def __init__(self, config: SimConfig, reference_density: float):
        self.config = config
        self.lattice = config.lattice
        self.dt = config.dt
        self.u0 = config.u0
        self.noise = config.noise
        omega = config.angular_frequencies()
        self.half_phase = np.exp(-0.5j * omega * self.dt)
        self.noise_scale = np.sqrt(self.dt / self.lattice.cell_volume)
        self.threshold = config.divergence_factor * reference_density

    def kinetic_half_step(self, psi: np.ndarray, psi_tilde: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        lattice = self.lattice
        psi_k = to_momentum(ComplexField(psi, Space.POSITION, lattice))
        tilde_k = to_momentum(ComplexField(psi_tilde, Space.POSITION, lattice), adjoint=True)
        psi_k.values *= self.half_phase
        tilde_k.values *= np.conj(self.half_phase)
        return to_position(psi_k).values, to_position(tilde_k, adjoint=True).values

    def step(self, psi: np.ndarray, psi_tilde: np.ndarray,
             rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, np.ndarray]:
        psi, psi_tilde = self.kinetic_half_step(psi, psi_tilde)

        if self.noise and self.u0 != 0.0:
            dw1 = rng.standard_normal(psi.shape) * self.noise_scale
            dw2 = rng.standard_normal(psi.shape) * self.noise_scale
            kick = np.sqrt(-1j * self.u0 * psi ** 2) * dw1
            kick_tilde = np.sqrt(1j * self.u0 * psi_tilde ** 2) * dw2
        else:
            kick = kick_tilde = 0.0

        if self.u0 != 0.0:
            phase = np.exp(-1j * self.u0 * self.dt * psi * psi_tilde)
            psi = psi * phase
            psi_tilde = psi_tilde / phase
        psi = psi + kick
        psi_tilde = psi_tilde + kick_tilde

        return self.kinetic_half_step(psi, psi_tilde)

    def diverged(self, psi: np.ndarray, psi_tilde: np.ndarray) -> np.ndarray:
        """Per batch member: non-finite values or |Psi|^2, |Psi-tilde|^2 above threshold."""
        bad = ~(np.isfinite(psi) & np.isfinite(psi_tilde))
        with np.errstate(over='ignore', invalid='ignore'):
            bad |= np.abs(psi) ** 2 > self.threshold
            bad |= np.abs(psi_tilde) ** 2 > self.threshold
        return bad.any(axis=SPATIAL_AXES)


@dataclass
class TrajectoryRecord:
    trajectory_id: int
    valid: bool
    samples: Dict[int, FieldPair] = field(default_factory=dict)
    steps_completed: int = 0
    failure_time: Optional[float] = None


def integrate(pair: FieldPair, config: SimConfig, rng: Optional[np.random.Generator],
              reference_density: Optional[float] = None,
              sample_steps: Optional[Sequence[int]] = None) -> Tuple[Dict[int, FieldPair], np.ndarray, int]:
    """
    Advance a position-space pair through config.n_steps steps.

    Returns:
        (momentum-space samples keyed by step, validity mask per batch member,
         steps completed). Members that trip the divergence guard are zeroed
         and stay invalid; integration stops early when none are left.
    """
    if pair.psi.space is not Space.POSITION:
        raise LatticeError("integrate expects position-space fields")
    reference = reference_density or config.reference_density
    if reference is None:
        reference = float(np.max(np.abs(pair.psi.values) ** 2))
    integrator = FieldIntegrator(config, reference)
    wanted = set(sample_steps if sample_steps is not None else config.sample_steps)

    psi = pair.psi.values.copy()
    psi_tilde = pair.psi_tilde.values.copy()
    batch_shape = psi.shape[:-3]
    valid = np.ones(batch_shape, dtype=bool)
    samples: Dict[int, FieldPair] = {}

    def record(step_index: int):
        current = FieldPair(ComplexField(psi, Space.POSITION, config.lattice),
                            ComplexField(psi_tilde, Space.POSITION, config.lattice),
                            step_index * config.dt, pair.trajectory_id, pair.rng_seed)
        psi_k, tilde_k = current.momentum_amplitudes()
        samples[step_index] = FieldPair(ComplexField(psi_k, Space.MOMENTUM, config.lattice),
                                        ComplexField(tilde_k, Space.MOMENTUM, config.lattice),
                                        current.time, pair.trajectory_id, pair.rng_seed)

    if 0 in wanted:
        record(0)

    completed = 0
    with np.errstate(over='ignore', invalid='ignore'):
        for step_index in range(1, config.n_steps + 1):
            psi, psi_tilde = integrator.step(psi, psi_tilde, rng)
            bad = integrator.diverged(psi, psi_tilde)
            if np.any(bad):
                valid &= ~bad
                psi[bad] = 0.0
                psi_tilde[bad] = 0.0
            completed = step_index
            if not valid.any():
                break
            if step_index in wanted:
                record(step_index)

    return samples, valid, completed


def run_trajectory(init: FieldPair, config: SimConfig, trajectory_id: int,
                   reference_density: Optional[float] = None) -> TrajectoryRecord:
    """One stochastic realisation; deterministic in (config.base_seed, trajectory_id)."""
    rng = trajectory_rng(config.base_seed, trajectory_id) if config.noise else None
    start = init.copy()
    start.trajectory_id = trajectory_id
    start.rng_seed = config.base_seed
    samples, valid, completed = integrate(start, config, rng, reference_density)

    ok = bool(np.all(valid))
    if not ok:
        logger.debug(f"trajectory {trajectory_id} diverged after {completed} steps")
        return TrajectoryRecord(trajectory_id, False, {}, completed, completed * config.dt)
    return TrajectoryRecord(trajectory_id, True, samples, completed)


def initialize_collision(ground_state: GroundState, params: Optional[PhysicalParams] = None,
                         lattice: Optional[Lattice3D] = None) -> FieldPair:
    """
    Standing-wave modulated source, Psi = sqrt(rho0/2)(e^{ikx} + e^{-ikx}),
    with k the grid wavenumber nearest k_r and Psi-tilde = conj(Psi).
    """
    params = params or ground_state.params
    lattice = lattice or ground_state.lattice
    if ground_state.density.shape != lattice.shape:
        raise LatticeError("Ground state and lattice differ",
                           context={'ground_state': ground_state.density.shape, 'lattice': lattice.shape})

    k_r = params.k_r
    if k_r >= lattice.k_max[0]:
        raise LatticeError("Collision momentum beyond lattice cutoff",
                           context={'k_r': k_r, 'k_max_x': float(lattice.k_max[0])})
    k_grid = abs(float(lattice.wavenumbers(0)[lattice.nearest_k_index(0, k_r)]))
    if k_r > 0 and abs(k_grid - k_r) > 0.01 * k_r:
        logger.warning(f"k_r={k_r:.4e} 1/m represented by grid wavenumber {k_grid:.4e} 1/m")

    x = lattice.x_components[0]
    modulation = 2.0 * np.cos(k_grid * x)
    psi = np.sqrt(0.5 * ground_state.density) * modulation
    psi = np.broadcast_to(psi, lattice.shape).astype(np.complex128)
    return FieldPair(ComplexField(psi, Space.POSITION, lattice),
                     ComplexField(np.conj(psi), Space.POSITION, lattice))


def max_sim_time(params: PhysicalParams, lattice: Lattice3D,
                 peak_density: Optional[float] = None) -> float:
    """
    Upper bound on usable positive-P simulation time,
    2.5 m dV^(1/3) / (4 pi hbar a rho0^(2/3)), with a chosen by
    params.time_bound_length.
    """
    rho0 = peak_density if peak_density is not None else params.peak_density
    if rho0 is None:
        raise ConfigError("Peak density needed for the simulation-time bound")
    a = params.a00 if params.time_bound_length == 'a00' else params.a11
    if a <= 0:
        return float('inf')
    return 2.5 * params.mass * lattice.cell_volume ** (1.0 / 3.0) / (4.0 * np.pi * hbar * a * rho0 ** (2.0 / 3.0))


def time_bound_warnings(config: SimConfig, peak_density: Optional[float] = None) -> List[str]:
    bound = max_sim_time(config.params, config.lattice, peak_density)
    if config.t_final > bound:
        message = (f"t_final={config.t_final:.3e} s exceeds the positive-P time bound "
                   f"{bound:.3e} s; trajectories may diverge")
        logger.warning(message)
        return [message]
    return []
