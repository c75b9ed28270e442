"""Stillinger-Weber potential with analytic forces and virial.

Serves as the ground-truth label generator. The pair term is

    phi2(r) = A*eps*(B*(sigma/r)**p - (sigma/r)**q) * exp(sigma/(r - a*sigma))

and the three-body term, centered on atom i over unordered neighbor
pairs (j, k),

    phi3 = lam*eps*(cos(theta_jik) - cos_theta0)**2
           * exp(gamma*sigma/(r_ij - a*sigma))
           * exp(gamma*sigma/(r_ik - a*sigma)),

both identically zero at and beyond r = a*sigma.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .geometry import Configuration, NeighborList, build_neighbor_list

__all__ = [
    "SWParameters",
    "OverlapError",
    "default_parameters",
    "load_parameter_file",
    "write_parameter_file",
    "sw_energy",
    "sw_forces",
    "sw_energy_forces_virial",
    "SWPotential",
]

DISTANCE_FLOOR = 1e-6  # A; anything at or below this is a hard overlap


class OverlapError(RuntimeError):
    """Two atoms closer than the numerical floor of the potential."""


@dataclass(frozen=True)
class SWParameters:
    epsilon: float          # eV
    sigma: float            # A
    a: float                # cutoff multiplier, r_c = a*sigma
    lam: float
    gamma: float
    A: float
    B: float
    p: float
    q: float
    cos_theta0: float = -1.0 / 3.0

    def __post_init__(self):
        for name in ("epsilon", "sigma", "a", "A"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SW parameter {name} must be positive")

    @property
    def cutoff(self) -> float:
        return self.a * self.sigma


# Si: Stillinger & Weber (1985). Ge: Jian-style reparameterization with
# eps, sigma, lam changed and the remaining constants shared with Si.
_DEFAULTS: Dict[str, SWParameters] = {
    "Si": SWParameters(epsilon=2.1683, sigma=2.0951, a=1.80, lam=21.0,
                       gamma=1.20, A=7.049556277, B=0.6022245584, p=4.0, q=0.0),
    "Ge": SWParameters(epsilon=1.93, sigma=2.181, a=1.80, lam=31.0,
                       gamma=1.20, A=7.049556277, B=0.6022245584, p=4.0, q=0.0),
}

_FIELDS = ("epsilon", "sigma", "a", "lambda", "gamma", "A", "B", "p", "q")


def default_parameters(element: str) -> SWParameters:
    try:
        return _DEFAULTS[element]
    except KeyError:
        raise ValueError(f"no Stillinger-Weber parameters for element {element!r}") from None


def load_parameter_file(path) -> Dict[str, SWParameters]:
    """Parse a flat key-value parameter file, one element per block.

    Blocks start with `element <symbol>` and the remaining lines are
    `key value` pairs for epsilon, sigma, a, lambda, gamma, A, B, p, q.
    Missing keys fall back to the element's built-in defaults when those
    exist; `#` starts a comment.
    """
    blocks = []
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'key value', got {raw!r}")
            key, value = parts
            if key == "element":
                current = {"element": value}
                blocks.append(current)
            elif key in _FIELDS:
                if current is None:
                    raise ValueError(f"{path}:{lineno}: key before any 'element' line")
                current[key] = float(value)
            else:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    out = {}
    for block in blocks:
        element = block.pop("element")
        base = _DEFAULTS.get(element)
        kwargs = {}
        for key in _FIELDS:
            attr = "lam" if key == "lambda" else key
            if key in block:
                kwargs[attr] = block[key]
            elif base is not None:
                kwargs[attr] = getattr(base, attr)
            else:
                raise ValueError(f"{path}: element {element} is missing key {key!r}")
        out[element] = SWParameters(**kwargs)
    return out


def write_parameter_file(path, table: Dict[str, SWParameters]) -> None:
    with open(path, "w") as fh:
        for element in sorted(table):
            par = table[element]
            fh.write(f"element {element}\n")
            for key in _FIELDS:
                attr = "lam" if key == "lambda" else key
                fh.write(f"{key} {getattr(par, attr):.17g}\n")
            fh.write("\n")


def _pair_terms(par: SWParameters, r: np.ndarray):
    """phi2(r) and dphi2/dr on an array of distances, masked beyond cutoff."""
    rc = par.cutoff
    inside = r < rc
    rs = np.where(inside, r, 0.5 * rc)     # dummy value, masked out below
    x = par.sigma / rs
    screen = np.exp(par.sigma / (rs - rc))
    radial = par.B * x ** par.p - x ** par.q
    phi = par.A * par.epsilon * radial * screen
    dradial = (-par.p * par.B * x ** par.p + par.q * x ** par.q) / rs
    dphi = par.A * par.epsilon * screen * (dradial - radial * par.sigma / (rs - rc) ** 2)
    zero = np.zeros_like(r)
    return np.where(inside, phi, zero), np.where(inside, dphi, zero)


def _screen3(par: SWParameters, r: np.ndarray):
    """g(r) = exp(gamma*sigma/(r - a*sigma)) and g'(r), masked beyond cutoff."""
    rc = par.cutoff
    inside = r < rc
    rs = np.where(inside, r, 0.5 * rc)
    g = np.exp(par.gamma * par.sigma / (rs - rc))
    dg = -g * par.gamma * par.sigma / (rs - rc) ** 2
    zero = np.zeros_like(r)
    return np.where(inside, g, zero), np.where(inside, dg, zero)


def sw_energy_forces_virial(config: Configuration, params: SWParameters,
                            neighbors: Optional[NeighborList] = None):
    """Total energy (eV), per-atom forces (eV/A) and scalar virial (eV).

    The virial is W = -dE/d(isotropic strain); the instantaneous pressure
    is (2*E_kin + W) / (3*V).
    """
    if neighbors is None:
        neighbors = build_neighbor_list(config, params.cutoff)
    elif neighbors.cutoff < params.cutoff:
        raise ValueError("neighbor list cutoff below the interaction cutoff")
    n = config.n_atoms
    forces = np.zeros((n, 3))
    if neighbors.n_pairs == 0:
        return 0.0, forces, 0.0

    i_idx = neighbors.pair_i
    j_idx = neighbors.pair_j
    d = neighbors.disp
    r = neighbors.dist
    if np.any(r <= DISTANCE_FLOOR):
        raise OverlapError("interatomic distance at or below numerical floor")

    # pair part; directed list counts every bond twice
    phi, dphi = _pair_terms(params, r)
    energy = 0.5 * float(phi.sum())
    fpair = (0.5 * dphi / r)[:, None] * d      # dE/d(disp) per directed entry
    np.subtract.at(forces, j_idx, fpair)
    np.add.at(forces, i_idx, fpair)
    virial = -float(np.einsum("ij,ij->", fpair, d))

    # three-body part over unordered neighbor pairs per center
    t1, t2 = neighbors.triplets()
    if len(t1):
        d1, d2 = d[t1], d[t2]
        r1, r2 = r[t1], r[t2]
        g1, dg1 = _screen3(params, r1)
        g2, dg2 = _screen3(params, r2)
        active = (g1 > 0) & (g2 > 0)
        if np.any(active):
            t1 = t1[active]
            t2 = t2[active]
            d1, d2, r1, r2 = d1[active], d2[active], r1[active], r2[active]
            g1, dg1, g2, dg2 = g1[active], dg1[active], g2[active], dg2[active]
            cos = np.einsum("ij,ij->i", d1, d2) / (r1 * r2)
            dc = cos - params.cos_theta0
            pref = params.lam * params.epsilon
            energy += float(pref * np.sum(dc * dc * g1 * g2))

            # dE/d(d1) and dE/d(d2) per triplet
            dcos_d1 = d2 / (r1 * r2)[:, None] - (cos / (r1 * r1))[:, None] * d1
            dcos_d2 = d1 / (r1 * r2)[:, None] - (cos / (r2 * r2))[:, None] * d2
            common = pref * 2.0 * dc * g1 * g2
            grad1 = (common[:, None] * dcos_d1
                     + (pref * dc * dc * dg1 * g2 / r1)[:, None] * d1)
            grad2 = (common[:, None] * dcos_d2
                     + (pref * dc * dc * g1 * dg2 / r2)[:, None] * d2)

            ci = i_idx[t1]                      # shared center atom
            ja = j_idx[t1]
            ka = j_idx[t2]
            np.subtract.at(forces, ja, grad1)
            np.subtract.at(forces, ka, grad2)
            np.add.at(forces, ci, grad1 + grad2)
            virial -= float(np.einsum("ij,ij->", grad1, d1)
                            + np.einsum("ij,ij->", grad2, d2))

    return energy, forces, virial


def sw_energy(config: Configuration, params: SWParameters,
              neighbors: Optional[NeighborList] = None) -> float:
    return sw_energy_forces_virial(config, params, neighbors)[0]


def sw_forces(config: Configuration, params: SWParameters,
              neighbors: Optional[NeighborList] = None) -> np.ndarray:
    return sw_energy_forces_virial(config, params, neighbors)[1]


class SWPotential:
    """Force provider backed by per-element Stillinger-Weber constants."""

    def __init__(self, table: Optional[Dict[str, SWParameters]] = None):
        self.table = dict(table) if table is not None else dict(_DEFAULTS)

    @classmethod
    def for_element(cls, element: str, params: Optional[SWParameters] = None):
        return cls({element: params if params is not None else default_parameters(element)})

    def parameters_for(self, config: Configuration) -> SWParameters:
        symbols = set(config.species)
        if len(symbols) != 1:
            raise ValueError("Stillinger-Weber evaluation requires a single element")
        (symbol,) = symbols
        if symbol not in self.table:
            raise ValueError(f"no Stillinger-Weber parameters for element {symbol!r}")
        return self.table[symbol]

    def cutoff_for(self, config: Configuration) -> float:
        return self.parameters_for(config).cutoff

    def energy_forces_virial(self, config, neighbors=None):
        return sw_energy_forces_virial(config, self.parameters_for(config), neighbors)

    def energy_forces(self, config, neighbors=None):
        e, f, _ = self.energy_forces_virial(config, neighbors)
        return e, f

    def energy(self, config, neighbors=None) -> float:
        return self.energy_forces_virial(config, neighbors)[0]

    def forces(self, config, neighbors=None) -> np.ndarray:
        return self.energy_forces_virial(config, neighbors)[1]
