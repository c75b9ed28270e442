"""Molecular dynamics: velocity Verlet with Langevin, Nose-Hoover chain
and isotropic MTK barostat variants, plus trajectory recording and the
Stillinger-Weber dataset generator.

The NVT/NPT integrator follows the measure-preserving operator splitting
of Martyna et al. (1996) / Tuckerman et al. (2006) with chains of length
two on both the particles and the cell momentum. Langevin uses BAOAB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import units
from .geometry import Cell, Configuration, NeighborList, build_neighbor_list, \
    diamond_supercell, get_species
from .sw import OverlapError, SWPotential

__all__ = [
    "IntegratorSpec",
    "MDState",
    "TrajectoryRecord",
    "DivergenceError",
    "NeighborCache",
    "maxwell_boltzmann_velocities",
    "initialize_state",
    "step",
    "run",
    "generate_dataset",
]

ENSEMBLES = ("NVE", "NVT_Langevin", "NVT_NoseHoover", "NPT_NoseHoover")

# hard floor on interatomic distances before a run counts as diverged
DIVERGENCE_DISTANCE = 0.2  # A
TEMPERATURE_BLOWUP = 100.0  # multiples of the target


class DivergenceError(RuntimeError):
    """A trajectory left the physically meaningful regime."""

    def __init__(self, step_index: int, reason: str):
        super().__init__(f"diverged at step {step_index}: {reason}")
        self.step_index = step_index
        self.reason = reason


@dataclass(frozen=True)
class IntegratorSpec:
    timestep: float                     # fs
    ensemble: str = "NVE"
    target_temperature: float = 0.0     # K
    target_pressure: float = 0.0        # bar
    thermostat_damping: Optional[float] = None   # fs; default 100 * timestep
    barostat_damping: Optional[float] = None     # fs; default 1000 * timestep
    langevin_friction: float = 1.0      # 1/ps

    def __post_init__(self):
        if self.ensemble not in ENSEMBLES:
            raise ValueError(f"unknown ensemble {self.ensemble!r}; pick from {ENSEMBLES}")
        if not self.timestep > 0:
            raise ValueError("timestep must be positive")
        if self.ensemble != "NVE" and not self.target_temperature > 0:
            raise ValueError("thermostatted ensembles need a positive target temperature")
        if self.ensemble == "NVT_Langevin" and not self.langevin_friction > 0:
            raise ValueError("langevin_friction must be positive")
        for name in ("thermostat_damping", "barostat_damping"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def tau_thermostat(self) -> float:
        return self.thermostat_damping if self.thermostat_damping is not None \
            else 100.0 * self.timestep

    @property
    def tau_barostat(self) -> float:
        return self.barostat_damping if self.barostat_damping is not None \
            else 1000.0 * self.timestep


@dataclass
class MDState:
    """Full dynamical state. Forces are cached for the current positions."""

    configuration: Configuration
    velocities: np.ndarray              # A/fs
    masses_dyn: np.ndarray              # eV*fs^2/A^2
    rng: np.random.Generator
    step_index: int = 0
    # Nose-Hoover chain (length 2) on the particles and on the barostat
    eta: np.ndarray = field(default_factory=lambda: np.zeros(2))
    p_eta: np.ndarray = field(default_factory=lambda: np.zeros(2))
    eta_baro: np.ndarray = field(default_factory=lambda: np.zeros(2))
    p_eta_baro: np.ndarray = field(default_factory=lambda: np.zeros(2))
    p_eps: float = 0.0                  # cell-scaling momentum, eV*fs
    forces: Optional[np.ndarray] = None
    potential_energy: float = 0.0
    virial: float = 0.0

    @property
    def n_atoms(self) -> int:
        return self.configuration.n_atoms

    def kinetic_energy(self) -> float:
        return 0.5 * float(np.sum(self.masses_dyn[:, None] * self.velocities ** 2))

    def kinetic_temperature(self) -> float:
        return 2.0 * self.kinetic_energy() / (3.0 * self.n_atoms * units.KB)

    def total_momentum(self) -> np.ndarray:
        return (self.masses_dyn[:, None] * self.velocities).sum(axis=0)

    def pressure(self) -> float:
        """Instantaneous pressure in bar."""
        volume = self.configuration.cell.volume
        p = (2.0 * self.kinetic_energy() + self.virial) / (3.0 * volume)
        return p * units.EV_PER_A3_TO_BAR


@dataclass
class TrajectoryRecord:
    spec: IntegratorSpec
    times_fs: List[float] = field(default_factory=list)
    configurations: List[Configuration] = field(default_factory=list)
    potential_energies: List[float] = field(default_factory=list)
    temperatures: List[float] = field(default_factory=list)
    pressures: List[float] = field(default_factory=list)
    volumes: List[float] = field(default_factory=list)
    status: str = "completed"
    failure_step: Optional[int] = None
    failure_reason: Optional[str] = None
    final_state: Optional[MDState] = None

    @property
    def n_samples(self) -> int:
        return len(self.times_fs)

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def observable_rows(self):
        """(step, time_fs, E_pot_eV, T_kin_K, pressure_bar, volume_A3) rows."""
        dt = self.spec.timestep
        for k in range(self.n_samples):
            yield (int(round(self.times_fs[k] / dt)), self.times_fs[k],
                   self.potential_energies[k], self.temperatures[k],
                   self.pressures[k], self.volumes[k])


class NeighborCache:
    """Verlet-skin neighbor list reuse.

    Lists are built at cutoff + skin and reused until some atom has moved
    more than skin/2 since the build; skin == 0 rebuilds every step.
    """

    def __init__(self, cutoff: float, skin: float = 0.0):
        if skin < 0:
            raise ValueError("skin must be non-negative")
        self.cutoff = float(cutoff)
        self.skin = float(skin)
        self._list: Optional[NeighborList] = None
        self._positions: Optional[np.ndarray] = None

    def get(self, config: Configuration) -> NeighborList:
        if self.skin == 0.0:
            return build_neighbor_list(config, self.cutoff)
        if self._list is not None and self._positions.shape == config.positions.shape:
            moved2 = ((config.positions - self._positions) ** 2).sum(axis=1).max()
            if moved2 < (0.5 * self.skin) ** 2:
                return self._list.recompute(config)
        nl = build_neighbor_list(config, self.cutoff + self.skin)
        self._list = nl
        self._positions = config.positions.copy()
        return nl


def maxwell_boltzmann_velocities(masses_dyn: np.ndarray, temperature: float,
                                 rng: np.random.Generator) -> np.ndarray:
    """Seeded Maxwell-Boltzmann draw with the center-of-mass drift removed."""
    n = len(masses_dyn)
    if temperature <= 0:
        return np.zeros((n, 3))
    sigma = np.sqrt(units.KB * temperature / masses_dyn)
    v = rng.normal(size=(n, 3)) * sigma[:, None]
    v -= (masses_dyn[:, None] * v).sum(axis=0) / masses_dyn.sum()
    return v


def initialize_state(config: Configuration, temperature: float, seed,
                     force_provider=None,
                     velocities: Optional[np.ndarray] = None) -> MDState:
    rng = np.random.default_rng(seed)
    masses = config.masses() * units.AMU_TO_DYN
    if velocities is None:
        velocities = maxwell_boltzmann_velocities(masses, temperature, rng)
    state = MDState(configuration=config, velocities=np.array(velocities, dtype=float),
                    masses_dyn=masses, rng=rng)
    if force_provider is not None:
        e, f, w = force_provider.energy_forces_virial(config)
        state.forces, state.potential_energy, state.virial = f, e, w
    return state


def _phi(x: float) -> float:
    """(1 - exp(-x)) / x, stable near zero."""
    if x == 0.0:
        return 1.0
    return -math.expm1(-x) / x


def _nhc_quarter(p_eta: np.ndarray, driver0: float, kbt: float,
                 q: np.ndarray, t: float, order) -> None:
    """One u4 sweep (time t) over a 2-link chain, in the given link order.

    driver0 is the instantaneous 2K-like driver of link 0; link 1 is
    driven by link 0's own kinetic term, read after any link-0 update.
    """
    for j in order:
        if j == 0:
            x = t * p_eta[1] / q[1]
            p_eta[0] = p_eta[0] * math.exp(-x) + t * driver0 * _phi(x)
        else:
            g1 = p_eta[0] ** 2 / q[0] - kbt
            p_eta[1] = p_eta[1] + t * g1


def _thermostat_half(state: MDState, spec: IntegratorSpec, with_baro: bool) -> None:
    """u4-u3-u4 thermostat block over half a timestep, updating in place."""
    dt2 = 0.5 * spec.timestep
    dt4 = 0.5 * dt2
    kbt = units.KB * spec.target_temperature
    nf = 3 * state.n_atoms
    q = np.array([nf * kbt * spec.tau_thermostat ** 2,
                  kbt * spec.tau_thermostat ** 2])
    if with_baro:
        qb = np.array([kbt * spec.tau_barostat ** 2,
                       kbt * spec.tau_barostat ** 2])
        w_eps = (nf + 3) * kbt * spec.tau_barostat ** 2

    def u4(order):
        _nhc_quarter(state.p_eta, 2.0 * state.kinetic_energy() - nf * kbt,
                     kbt, q, dt4, order)
        if with_baro:
            _nhc_quarter(state.p_eta_baro, state.p_eps ** 2 / w_eps - kbt,
                         kbt, qb, dt4, order)

    u4((1, 0))
    # u3: velocity and cell-momentum scaling by the first chain links
    state.velocities = state.velocities * math.exp(-dt2 * state.p_eta[0] / q[0])
    state.eta = state.eta + dt2 * state.p_eta / q
    if with_baro:
        state.p_eps *= math.exp(-dt2 * state.p_eta_baro[0] / qb[0])
        state.eta_baro = state.eta_baro + dt2 * state.p_eta_baro / qb
    u4((0, 1))


def _check_finite(state: MDState, what: str) -> None:
    array = getattr(state, what)
    if array is None or not np.all(np.isfinite(array)):
        raise DivergenceError(state.step_index, f"non-finite {what}")


def _evaluate_forces(state: MDState, provider, cache: Optional[NeighborCache]):
    config = state.configuration
    neighbors = cache.get(config) if cache is not None else None
    try:
        e, f, w = provider.energy_forces_virial(config, neighbors)
    except OverlapError as exc:
        raise DivergenceError(state.step_index, str(exc)) from exc
    state.potential_energy, state.forces, state.virial = e, f, w
    if neighbors is not None and neighbors.n_pairs:
        if float(neighbors.dist.min()) < DIVERGENCE_DISTANCE:
            raise DivergenceError(state.step_index, "atoms closer than 0.2 A")
    _check_finite(state, "forces")


def step(state: MDState, force_provider, spec: IntegratorSpec,
         cache: Optional[NeighborCache] = None) -> MDState:
    """Advance one timestep. Raises DivergenceError on unphysical states."""
    if state.forces is None:
        _evaluate_forces(state, force_provider, cache)
    new = replace(
        state,
        configuration=state.configuration,
        velocities=state.velocities.copy(),
        eta=state.eta.copy(), p_eta=state.p_eta.copy(),
        eta_baro=state.eta_baro.copy(), p_eta_baro=state.p_eta_baro.copy(),
    )
    dt = spec.timestep
    ensemble = spec.ensemble

    if ensemble == "NVT_Langevin":
        _step_langevin(new, force_provider, spec, cache)
    else:
        with_thermo = ensemble in ("NVT_NoseHoover", "NPT_NoseHoover")
        with_baro = ensemble == "NPT_NoseHoover"
        if with_thermo:
            _thermostat_half(new, spec, with_baro)
            if with_baro:
                _baro_kick(new, spec, 0.5 * dt)
        _velocity_kick(new, spec, 0.5 * dt, with_baro)
        _drift(new, spec, dt, with_baro)
        _evaluate_forces(new, force_provider, cache)
        _velocity_kick(new, spec, 0.5 * dt, with_baro)
        if with_thermo:
            if with_baro:
                _baro_kick(new, spec, 0.5 * dt)
            _thermostat_half(new, spec, with_baro)

    new.step_index = state.step_index + 1
    _check_finite(new, "velocities")
    pos = new.configuration.positions
    if not np.all(np.isfinite(pos)):
        raise DivergenceError(new.step_index, "non-finite positions")
    if spec.target_temperature > 0:
        if new.kinetic_temperature() > TEMPERATURE_BLOWUP * spec.target_temperature:
            raise DivergenceError(new.step_index, "kinetic temperature blow-up")
    return new


def _velocity_kick(state: MDState, spec: IntegratorSpec, t: float, with_baro: bool):
    accel = state.forces / state.masses_dyn[:, None]
    if with_baro:
        nf = 3 * state.n_atoms
        kbt = units.KB * spec.target_temperature
        w_eps = (nf + 3) * kbt * spec.tau_barostat ** 2
        x = t * (1.0 + 3.0 / nf) * state.p_eps / w_eps
        state.velocities = state.velocities * math.exp(-x) + _phi(x) * t * accel
    else:
        state.velocities = state.velocities + t * accel


def _baro_kick(state: MDState, spec: IntegratorSpec, t: float):
    nf = 3 * state.n_atoms
    alpha = 1.0 + 3.0 / nf
    volume = state.configuration.cell.volume
    p_ext = spec.target_pressure / units.EV_PER_A3_TO_BAR
    g_eps = (alpha * 2.0 * state.kinetic_energy() + state.virial
             - 3.0 * p_ext * volume)
    state.p_eps += t * g_eps


def _drift(state: MDState, spec: IntegratorSpec, t: float, with_baro: bool):
    config = state.configuration
    if with_baro:
        nf = 3 * state.n_atoms
        kbt = units.KB * spec.target_temperature
        w_eps = (nf + 3) * kbt * spec.tau_barostat ** 2
        x = t * state.p_eps / w_eps
        scale = math.exp(x)
        growth = t * (math.expm1(x) / x if x != 0.0 else 1.0)
        cell = config.cell.scaled(scale)
        pos = cell.wrap(config.positions * scale + growth * state.velocities)
        state.configuration = Configuration(cell=cell, species=config.species,
                                            positions=pos,
                                            temperature=config.temperature)
    else:
        state.configuration = config.with_positions(
            config.positions + t * state.velocities)


def _step_langevin(state: MDState, provider, spec: IntegratorSpec, cache):
    dt = spec.timestep
    gamma = spec.langevin_friction / units.PS_TO_FS
    accel = state.forces / state.masses_dyn[:, None]
    v = state.velocities + 0.5 * dt * accel
    pos = state.configuration.positions + 0.5 * dt * v
    c1 = math.exp(-gamma * dt)
    sigma = np.sqrt((1.0 - c1 * c1) * units.KB * spec.target_temperature
                    / state.masses_dyn)
    v = c1 * v + sigma[:, None] * state.rng.normal(size=v.shape)
    pos = pos + 0.5 * dt * v
    state.configuration = state.configuration.with_positions(pos)
    _evaluate_forces(state, provider, cache)
    state.velocities = v + 0.5 * dt * state.forces / state.masses_dyn[:, None]


def run(initial: MDState, spec: IntegratorSpec, n_steps: int, sample_every: int,
        force_provider, neighbor_skin: float = 0.0) -> TrajectoryRecord:
    """Integrate n_steps, sampling every sample_every steps.

    Divergence truncates the record and sets the failure step instead of
    raising, so that instability itself is usable data.
    """
    if n_steps < 1 or sample_every < 1:
        raise ValueError("n_steps and sample_every must be >= 1")
    cutoff = force_provider.cutoff_for(initial.configuration)
    cache = NeighborCache(cutoff, neighbor_skin)
    record = TrajectoryRecord(spec=spec)
    state = initial
    if state.forces is None:
        try:
            _evaluate_forces(state, force_provider, cache)
        except DivergenceError as exc:
            record.status = "diverged"
            record.failure_step = 0
            record.failure_reason = exc.reason
            record.final_state = state
            return record
    for k in range(1, n_steps + 1):
        try:
            state = step(state, force_provider, spec, cache)
        except DivergenceError as exc:
            record.status = "diverged"
            record.failure_step = k
            record.failure_reason = exc.reason
            break
        if k % sample_every == 0:
            record.times_fs.append(k * spec.timestep)
            record.configurations.append(state.configuration)
            record.potential_energies.append(state.potential_energy)
            record.temperatures.append(state.kinetic_temperature())
            record.pressures.append(state.pressure())
            record.volumes.append(state.configuration.cell.volume)
    record.final_state = state
    return record


@dataclass(frozen=True)
class GenerationProtocol:
    """NPT-equilibrate-then-NVT-produce recipe for one element.

    The published protocol (4 ns NPT, 1 ns NVT, 1 ps sampling, 1 fs step)
    is one parameterization of this; desk-scale runs shrink the durations.
    """

    timestep: float = 1.0               # fs
    npt_equilibration_fs: float = 2000.0
    nvt_production_fs: float = 3000.0
    sample_interval_fs: float = 100.0
    target_pressure: float = 0.0        # bar
    thermostat_damping: Optional[float] = None  # default 100 * timestep
    barostat_damping: Optional[float] = None    # default 1000 * timestep
    neighbor_skin: float = 0.5

    def steps(self, duration_fs: float) -> int:
        return max(1, int(round(duration_fs / self.timestep)))


def generate_dataset(element: str, temperatures: Sequence[float],
                     protocol: GenerationProtocol, seed,
                     potential: Optional[SWPotential] = None,
                     lattice_constant: Optional[float] = None,
                     ) -> Tuple[List[Configuration], List[Tuple[float, str]]]:
    """Labeled Stillinger-Weber samples across a temperature grid.

    Each temperature runs NPT equilibration from the 64-atom diamond cell
    followed by NVT production; every sampled frame is relabeled with a
    fresh SW evaluation and tagged with its temperature. Diverged
    temperatures are reported in the second return value, never dropped
    silently.
    """
    pot = potential if potential is not None else SWPotential()
    if lattice_constant is None:
        lattice_constant = {"Si": 5.431, "Ge": 5.654}.get(element)
        if lattice_constant is None:
            raise ValueError(f"no default lattice constant for {element!r}")
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(temperatures))
    samples: List[Configuration] = []
    skipped: List[Tuple[float, str]] = []
    for temp, child in zip(temperatures, children):
        crystal = diamond_supercell(element, lattice_constant)
        state = initialize_state(crystal, temp, child, force_provider=pot)
        npt = IntegratorSpec(timestep=protocol.timestep, ensemble="NPT_NoseHoover",
                             target_temperature=temp,
                             target_pressure=protocol.target_pressure,
                             thermostat_damping=protocol.thermostat_damping,
                             barostat_damping=protocol.barostat_damping)
        n_equil = protocol.steps(protocol.npt_equilibration_fs)
        equil = run(state, npt, n_equil, n_equil, pot,
                    neighbor_skin=protocol.neighbor_skin)
        if not equil.completed:
            skipped.append((temp, f"NPT equilibration: {equil.failure_reason}"))
            continue
        nvt = IntegratorSpec(timestep=protocol.timestep, ensemble="NVT_NoseHoover",
                             target_temperature=temp,
                             thermostat_damping=protocol.thermostat_damping)
        prod = run(equil.final_state, nvt,
                   protocol.steps(protocol.nvt_production_fs),
                   max(1, int(round(protocol.sample_interval_fs / protocol.timestep))),
                   pot, neighbor_skin=protocol.neighbor_skin)
        if not prod.completed:
            skipped.append((temp, f"NVT production: {prod.failure_reason}"))
            continue
        for config in prod.configurations:
            energy, forces, _ = pot.energy_forces_virial(config)
            samples.append(Configuration(
                cell=config.cell, species=config.species,
                positions=config.positions, ref_energy=energy,
                ref_forces=forces, temperature=temp))
    return samples, skipped
