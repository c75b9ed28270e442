"""Periodic cells, configurations and neighbor lists.

Everything here is an immutable value: arrays are copied on construction
and marked read-only, so configurations and neighbor lists can be shared
freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "Cell",
    "Species",
    "Configuration",
    "NeighborList",
    "GeometryError",
    "build_neighbor_list",
    "minimum_image_displacement",
    "diamond_supercell",
    "get_species",
    "register_species",
]


class GeometryError(ValueError):
    """Degenerate cell, bad cutoff, or inconsistent atom counts."""


def _frozen(a, dtype=float):
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Species:
    """A chemical element with its atomic mass in amu."""

    symbol: str
    mass: float

    def __post_init__(self):
        if not self.mass > 0:
            raise GeometryError(f"non-positive mass for {self.symbol!r}")


_SPECIES_TABLE = {
    "Si": Species("Si", 28.0855),
    "Ge": Species("Ge", 72.63),
    "C": Species("C", 12.011),
    "Sn": Species("Sn", 118.71),
}


def get_species(symbol: str) -> Species:
    try:
        return _SPECIES_TABLE[symbol]
    except KeyError:
        raise GeometryError(f"unknown element {symbol!r}; register it first") from None


def register_species(species: Species) -> None:
    """Make an element (or an override of its mass) globally resolvable."""
    _SPECIES_TABLE[species.symbol] = species


@dataclass(frozen=True)
class Cell:
    """Simulation box. Rows of `lattice_vectors` are the lattice vectors in A."""

    lattice_vectors: np.ndarray
    periodic_flags: tuple = (True, True, True)

    def __post_init__(self):
        h = _frozen(self.lattice_vectors)
        if h.shape != (3, 3):
            raise GeometryError("lattice_vectors must be 3x3")
        if not np.all(np.isfinite(h)):
            raise GeometryError("non-finite lattice vectors")
        if np.linalg.det(h) <= 1e-10:
            raise GeometryError("cell must be right-handed and non-degenerate")
        object.__setattr__(self, "lattice_vectors", h)
        object.__setattr__(self, "periodic_flags", tuple(bool(p) for p in self.periodic_flags))

    @property
    def volume(self) -> float:
        return float(np.linalg.det(self.lattice_vectors))

    def heights(self) -> np.ndarray:
        """Perpendicular distance between opposite cell faces, per axis."""
        h = self.lattice_vectors
        v = self.volume
        cross = np.cross(h[[1, 2, 0]], h[[2, 0, 1]])
        return v / np.linalg.norm(cross, axis=1)

    def min_height(self) -> float:
        per = [hh for hh, p in zip(self.heights(), self.periodic_flags) if p]
        return float(min(per)) if per else np.inf

    def fractional(self, positions: np.ndarray) -> np.ndarray:
        return np.asarray(positions) @ np.linalg.inv(self.lattice_vectors)

    def cartesian(self, frac: np.ndarray) -> np.ndarray:
        return np.asarray(frac) @ self.lattice_vectors

    def wrap(self, positions: np.ndarray) -> np.ndarray:
        """Wrap positions into the unit cell along the periodic axes."""
        f = self.fractional(positions)
        for k in range(3):
            if self.periodic_flags[k]:
                f[:, k] -= np.floor(f[:, k])
        return self.cartesian(f)

    def scaled(self, factor: float) -> "Cell":
        return Cell(self.lattice_vectors * factor, self.periodic_flags)


@dataclass(frozen=True)
class Configuration:
    """A periodic atomic snapshot, optionally carrying reference labels."""

    cell: Cell
    species: tuple
    positions: np.ndarray
    ref_energy: Optional[float] = None
    ref_forces: Optional[np.ndarray] = None
    temperature: Optional[float] = None

    def __post_init__(self):
        pos = _frozen(self.positions)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise GeometryError("positions must be (N, 3) with N >= 1")
        if not np.all(np.isfinite(pos)):
            raise GeometryError("non-finite positions")
        sp = tuple(str(s) for s in self.species)
        if len(sp) != pos.shape[0]:
            raise GeometryError("species and positions disagree on atom count")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "species", sp)
        if self.ref_forces is not None:
            f = _frozen(self.ref_forces)
            if f.shape != pos.shape:
                raise GeometryError("ref_forces shape must match positions")
            if not np.all(np.isfinite(f)):
                raise GeometryError("non-finite reference forces")
            object.__setattr__(self, "ref_forces", f)
        if self.ref_energy is not None:
            object.__setattr__(self, "ref_energy", float(self.ref_energy))
        if self.temperature is not None:
            object.__setattr__(self, "temperature", float(self.temperature))

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    def with_positions(self, positions, cell: Optional[Cell] = None) -> "Configuration":
        """Same atoms and labels' metadata, new coordinates (labels dropped)."""
        return Configuration(
            cell=cell if cell is not None else self.cell,
            species=self.species,
            positions=positions,
            temperature=self.temperature,
        )

    def with_labels(self, energy: float, forces: np.ndarray,
                    temperature: Optional[float] = None) -> "Configuration":
        return Configuration(
            cell=self.cell,
            species=self.species,
            positions=self.positions,
            ref_energy=energy,
            ref_forces=forces,
            temperature=self.temperature if temperature is None else temperature,
        )

    def masses(self) -> np.ndarray:
        """Per-atom masses in amu, resolved from the species table."""
        return np.array([get_species(s).mass for s in self.species])


def minimum_image_displacement(cell: Cell, r_a, r_b) -> np.ndarray:
    """Shortest periodic image of (r_b - r_a).

    The rounded fractional difference is refined by an exhaustive search
    over the 27 surrounding images, so the result is exact even for
    strongly skewed cells.
    """
    d = np.asarray(r_b, dtype=float) - np.asarray(r_a, dtype=float)
    h = cell.lattice_vectors
    f = d @ np.linalg.inv(h)
    base = np.where(cell.periodic_flags, np.round(f), 0.0)
    best = d
    best_r2 = np.inf
    for sa in _axis_shifts(cell, 0):
        for sb in _axis_shifts(cell, 1):
            for sc in _axis_shifts(cell, 2):
                cand = d + (-(base + (sa, sb, sc))) @ h
                r2 = float(cand @ cand)
                if r2 < best_r2:
                    best_r2 = r2
                    best = cand
    return best


def _axis_shifts(cell: Cell, k: int):
    return (-1, 0, 1) if cell.periodic_flags[k] else (0,)


class NeighborList:
    """Directed periodic pair list below a cutoff.

    Pairs are stored in both directions and sorted by (i, j, image shift)
    so that energies sum in a reproducible order. `shifts` holds the
    integer image offsets: disp = pos[j] - pos[i] + shifts @ lattice.
    """

    def __init__(self, cutoff, n_atoms, pair_i, pair_j, shifts, disp):
        self.cutoff = float(cutoff)
        self.n_atoms = int(n_atoms)
        self.pair_i = _frozen(pair_i, dtype=np.int64)
        self.pair_j = _frozen(pair_j, dtype=np.int64)
        self.shifts = _frozen(shifts, dtype=np.int64)
        self.disp = _frozen(disp)
        self.dist = _frozen(np.linalg.norm(self.disp, axis=1) if len(pair_i) else np.zeros(0))
        self._triplets = None

    @property
    def n_pairs(self) -> int:
        return len(self.pair_i)

    def triplets(self):
        """Index pairs (first, second) into the pair arrays sharing a center.

        For every center atom i the unordered neighbor pairs (j, k) are
        enumerated once, in pair-array order (first < second).
        """
        if self._triplets is None:
            firsts = []
            seconds = []
            # pair_i is sorted, so per-center slices are contiguous
            bounds = np.searchsorted(self.pair_i, np.arange(self.n_atoms + 1))
            for a in range(self.n_atoms):
                lo, hi = bounds[a], bounds[a + 1]
                k = hi - lo
                if k >= 2:
                    t1, t2 = np.triu_indices(k, 1)
                    firsts.append(t1 + lo)
                    seconds.append(t2 + lo)
            if firsts:
                first = np.concatenate(firsts)
                second = np.concatenate(seconds)
            else:
                first = np.zeros(0, dtype=np.int64)
                second = np.zeros(0, dtype=np.int64)
            first.setflags(write=False)
            second.setflags(write=False)
            self._triplets = (first, second)
        return self._triplets

    def recompute(self, config: Configuration) -> "NeighborList":
        """Same pair topology, displacements refreshed for new coordinates.

        Used by the skin cache: the list stays valid while no atom has
        moved more than half the skin since it was built.
        """
        pos = config.positions
        disp = (pos[self.pair_j] - pos[self.pair_i]
                + self.shifts @ config.cell.lattice_vectors)
        out = NeighborList(self.cutoff, self.n_atoms, self.pair_i, self.pair_j,
                           self.shifts, disp)
        out._triplets = self._triplets
        return out


def build_neighbor_list(config: Configuration, cutoff: float) -> NeighborList:
    """All directed pairs with distance < cutoff under periodic boundaries.

    Uses the minimum-image fast path when the cutoff allows it and falls
    back to a replicated-image search otherwise, so the list is correct
    for any cutoff (including self images in small cells).
    """
    if not cutoff > 0:
        raise GeometryError("cutoff must be positive")
    cell = config.cell
    pos = config.positions
    n = config.n_atoms
    h = cell.lattice_vectors

    # displacement arithmetic is kept as (pos_j - pos_i) + shift @ h in every
    # code path so that (i,j,s) and (j,i,-s) entries negate bitwise and
    # recompute() reproduces the build exactly
    if cutoff < 0.5 * cell.min_height() and all(cell.periodic_flags):
        frac = cell.fractional(pos)
        shift = -np.round(frac[None, :, :] - frac[:, None, :])
        d = (pos[None, :, :] - pos[:, None, :]) + shift @ h
        r2 = np.einsum("ijk,ijk->ij", d, d)
        mask = r2 < cutoff * cutoff
        np.fill_diagonal(mask, False)
        ii, jj = np.nonzero(mask)
        return _sorted_list(cutoff, n, ii, jj, shift[ii, jj].astype(np.int64), d[ii, jj])

    # replicated-image search, correct beyond the minimum-image bound
    heights = cell.heights()
    reps = [
        int(np.ceil(cutoff / heights[k])) + 1 if cell.periodic_flags[k] else 0
        for k in range(3)
    ]
    frac = cell.fractional(pos)
    fwrap = frac.copy()
    for k in range(3):
        if cell.periodic_flags[k]:
            fwrap[:, k] -= np.floor(fwrap[:, k])
    base_shift = np.round(fwrap - frac).astype(np.int64)   # pos_wrapped = pos + base@h
    pw = cell.cartesian(fwrap)
    grids = [np.arange(-reps[k], reps[k] + 1) for k in range(3)]
    all_shifts = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, 3)

    dmat = pw[None, :, :] - pw[:, None, :]
    ii_l, jj_l, ss_l, dd_l = [], [], [], []
    for s in all_shifts:
        d = dmat + (s @ h)[None, None, :]
        r2 = np.einsum("ijk,ijk->ij", d, d)
        mask = r2 < cutoff * cutoff
        if not s.any():
            np.fill_diagonal(mask, False)
        ii, jj = np.nonzero(mask)
        if len(ii):
            ii_l.append(ii)
            jj_l.append(jj)
            # shift refers back to the unwrapped input coordinates
            ss_l.append(base_shift[jj] - base_shift[ii] + s[None, :])
            dd_l.append(d[mask])
    if ii_l:
        ii = np.concatenate(ii_l)
        jj = np.concatenate(jj_l)
        ss = np.concatenate(ss_l)
        dd = np.concatenate(dd_l)
    else:
        ii = np.zeros(0, dtype=np.int64)
        jj = np.zeros(0, dtype=np.int64)
        ss = np.zeros((0, 3), dtype=np.int64)
        dd = np.zeros((0, 3))
    return _sorted_list(cutoff, n, ii, jj, ss, dd)


def _sorted_list(cutoff, n, ii, jj, ss, dd):
    order = np.lexsort((ss[:, 2], ss[:, 1], ss[:, 0], jj, ii))
    return NeighborList(cutoff, n, ii[order], jj[order], ss[order], dd[order])


# fractional coordinates of the 8-atom conventional diamond cell
_DIAMOND_BASIS = np.array([
    [0.00, 0.00, 0.00],
    [0.00, 0.50, 0.50],
    [0.50, 0.00, 0.50],
    [0.50, 0.50, 0.00],
    [0.25, 0.25, 0.25],
    [0.25, 0.75, 0.75],
    [0.75, 0.25, 0.75],
    [0.75, 0.75, 0.25],
])


def diamond_supercell(element: str, lattice_constant: float,
                      reps: Sequence[int] = (2, 2, 2)) -> Configuration:
    """Replicated conventional diamond cell; (2,2,2) gives the 64-atom box."""
    reps = tuple(int(r) for r in reps)
    cells = np.stack(np.meshgrid(*[np.arange(r) for r in reps], indexing="ij"),
                     axis=-1).reshape(-1, 3)
    frac = (cells[:, None, :] + _DIAMOND_BASIS[None, :, :]).reshape(-1, 3)
    frac /= np.asarray(reps, dtype=float)
    h = np.diag([lattice_constant * r for r in reps]).astype(float)
    cell = Cell(h)
    return Configuration(
        cell=cell,
        species=(element,) * frac.shape[0],
        positions=frac @ h,
    )
