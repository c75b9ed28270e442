import math

import numpy as np
import pytest

from tlip.geometry import Cell, Configuration, build_neighbor_list, diamond_supercell
from tlip.sw import (
    OverlapError,
    SWParameters,
    SWPotential,
    default_parameters,
    load_parameter_file,
    sw_energy,
    sw_energy_forces_virial,
    sw_forces,
    write_parameter_file,
)

SI = default_parameters("Si")
GE = default_parameters("Ge")


def phi2_reference(r, par):
    """Independent scalar evaluation of the pair term."""
    rc = par.a * par.sigma
    if r >= rc:
        return 0.0
    return (par.A * par.epsilon
            * (par.B * (par.sigma / r) ** par.p - (par.sigma / r) ** par.q)
            * math.exp(par.sigma / (r - rc)))


def phi3_reference(d1, d2, par):
    """Independent scalar evaluation of one three-body term."""
    rc = par.a * par.sigma
    r1 = np.linalg.norm(d1)
    r2 = np.linalg.norm(d2)
    if r1 >= rc or r2 >= rc:
        return 0.0
    cos = float(d1 @ d2 / (r1 * r2))
    return (par.lam * par.epsilon * (cos - par.cos_theta0) ** 2
            * math.exp(par.gamma * par.sigma / (r1 - rc))
            * math.exp(par.gamma * par.sigma / (r2 - rc)))


def dimer(r, element="Si", box=25.0):
    return Configuration(cell=Cell(box * np.eye(3)), species=(element,) * 2,
                         positions=[[0.0, 0.0, 0.0], [r, 0.0, 0.0]])


def random_liquidish(rng, n=8, box=7.5, element="Si"):
    # rejection-sample a configuration without overlapping cores
    while True:
        pos = rng.uniform(0, box, size=(n, 3))
        config = Configuration(cell=Cell(box * np.eye(3)),
                               species=(element,) * n, positions=pos)
        nl = build_neighbor_list(config, 4.0)
        if nl.n_pairs == 0 or nl.dist.min() > 1.7:
            return config


class TestDefaults:
    def test_si_canonical(self):
        assert SI.p == 4 and SI.q == 0
        assert SI.cos_theta0 == pytest.approx(-1.0 / 3.0)
        assert SI.epsilon == pytest.approx(2.1683)
        assert SI.cutoff == pytest.approx(1.80 * 2.0951)

    def test_ge_shares_shape_constants(self):
        for name in ("a", "gamma", "A", "B", "p", "q"):
            assert getattr(GE, name) == getattr(SI, name)
        assert (GE.epsilon, GE.sigma, GE.lam) != (SI.epsilon, SI.sigma, SI.lam)

    def test_unknown_element(self):
        with pytest.raises(ValueError):
            default_parameters("Pu")

    def test_parameter_file_roundtrip(self, tmp_path):
        path = tmp_path / "sw_params.txt"
        write_parameter_file(path, {"Si": SI, "Ge": GE})
        table = load_parameter_file(path)
        assert table["Si"] == SI
        assert table["Ge"] == GE

    def test_parameter_file_override(self, tmp_path):
        path = tmp_path / "custom.txt"
        path.write_text("element Si\nepsilon 2.5\n")
        table = load_parameter_file(path)
        assert table["Si"].epsilon == 2.5
        assert table["Si"].sigma == SI.sigma

    def test_parameter_file_bad_key(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("element Si\nnonsense 1.0\n")
        with pytest.raises(ValueError):
            load_parameter_file(path)


class TestPairTerm:
    def test_zero_beyond_cutoff(self):
        assert sw_energy(dimer(SI.cutoff), SI) == 0.0
        assert sw_energy(dimer(SI.cutoff + 0.5), SI) == 0.0

    def test_dimer_curve_matches_scalar_reference(self):
        for r in np.linspace(2.0, 3.7, 35):
            e = sw_energy(dimer(r), SI)
            assert e == pytest.approx(phi2_reference(r, SI), rel=1e-12, abs=1e-15)

    def test_pair_minimum_is_minus_epsilon(self):
        # SW constants are constructed so phi2 bottoms out at -eps at 2^(1/6)*sigma
        r_eq = 2.0 ** (1.0 / 6.0) * SI.sigma
        assert sw_energy(dimer(r_eq), SI) == pytest.approx(-SI.epsilon, rel=1e-6)

    def test_smooth_at_cutoff(self):
        assert abs(sw_energy(dimer(SI.cutoff - 1e-5), SI)) < 1e-8

    def test_overlap_error(self):
        with pytest.raises(OverlapError):
            sw_energy(dimer(1e-7), SI)


class TestThreeBody:
    def test_ideal_diamond_angles_contribute_zero(self):
        config = diamond_supercell("Si", 5.431)
        pair_only = SWParameters(epsilon=SI.epsilon, sigma=SI.sigma, a=SI.a,
                                 lam=0.0, gamma=SI.gamma, A=SI.A, B=SI.B,
                                 p=SI.p, q=SI.q)
        assert sw_energy(config, SI) == pytest.approx(sw_energy(config, pair_only),
                                                      abs=1e-10)

    def test_trimer_matches_scalar_reference(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            pos = np.array([[10.0, 10.0, 10.0],
                            [10.0, 10.0, 10.0],
                            [10.0, 10.0, 10.0]])
            pos[1] += rng.uniform(2.2, 3.2) * _unit(rng)
            pos[2] += rng.uniform(2.2, 3.2) * _unit(rng)
            config = Configuration(cell=Cell(30.0 * np.eye(3)), species=("Si",) * 3,
                                   positions=pos)
            d01 = pos[1] - pos[0]
            d02 = pos[2] - pos[0]
            d12 = pos[2] - pos[1]
            expected = (phi2_reference(np.linalg.norm(d01), SI)
                        + phi2_reference(np.linalg.norm(d02), SI)
                        + phi2_reference(np.linalg.norm(d12), SI)
                        + phi3_reference(d01, d02, SI)
                        + phi3_reference(-d01, d12, SI)
                        + phi3_reference(-d02, -d12, SI))
            assert sw_energy(config, SI) == pytest.approx(expected, rel=1e-12)


def _unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


class TestForces:
    def test_isolated_atom_zero_force(self):
        config = Configuration(cell=Cell(20 * np.eye(3)), species=("Si",),
                               positions=[[1.0, 2.0, 3.0]])
        assert np.all(sw_forces(config, SI) == 0.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        config = random_liquidish(rng)
        forces = sw_forces(config, SI)
        step = 1e-4
        scale = np.abs(forces).max()
        for atom in rng.choice(config.n_atoms, size=3, replace=False):
            for axis in range(3):
                fd = _central_difference(config, SI, int(atom), axis, step)
                assert abs(fd - forces[atom, axis]) < 1e-6 * max(scale, 1.0)

    def test_newton_third_law(self):
        rng = np.random.default_rng(123)
        for _ in range(5):
            config = random_liquidish(rng)
            forces = sw_forces(config, SI)
            assert np.abs(forces.sum(axis=0)).max() < 1e-10

    def test_mirror_symmetry(self):
        # isoceles triangle symmetric about the yz-plane
        pos = np.array([[10.0 - 1.2, 10.0, 10.0],
                        [10.0 + 1.2, 10.0, 10.0],
                        [10.0, 10.0 + 2.0, 10.0]])
        config = Configuration(cell=Cell(20 * np.eye(3)), species=("Si",) * 3,
                               positions=pos)
        f = sw_forces(config, SI)
        assert f[0, 0] == pytest.approx(-f[1, 0], abs=1e-12)
        assert f[0, 1] == pytest.approx(f[1, 1], abs=1e-12)
        assert f[2, 0] == pytest.approx(0.0, abs=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(8)
        config = random_liquidish(rng)
        e0 = sw_energy(config, SI)
        for _ in range(5):
            moved = config.with_positions(config.positions + rng.uniform(-9, 9, 3))
            assert abs(sw_energy(moved, SI) - e0) < 1e-10

    def test_rotation_invariance(self):
        rng = np.random.default_rng(9)
        config = random_liquidish(rng)
        e0 = sw_energy(config, SI)
        f0 = sw_forces(config, SI)
        for _ in range(5):
            q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
            if np.linalg.det(q) < 0:
                q[:, 0] *= -1
            rotated = Configuration(
                cell=Cell(config.cell.lattice_vectors @ q),
                species=config.species,
                positions=config.positions @ q,
            )
            assert abs(sw_energy(rotated, SI) - e0) < 1e-9
            assert np.abs(sw_forces(rotated, SI) - f0 @ q).max() < 1e-9

    def test_permutation_invariance(self):
        rng = np.random.default_rng(10)
        config = random_liquidish(rng)
        e0 = sw_energy(config, SI)
        f0 = sw_forces(config, SI)
        perm = rng.permutation(config.n_atoms)
        permuted = Configuration(cell=config.cell,
                                 species=tuple(config.species[k] for k in perm),
                                 positions=config.positions[perm])
        assert abs(sw_energy(permuted, SI) - e0) < 1e-10
        assert np.abs(sw_forces(permuted, SI) - f0[perm]).max() < 1e-10


def _central_difference(config, par, atom, axis, step):
    def energy_at(delta):
        pos = config.positions.copy()
        pos[atom, axis] += delta
        return sw_energy(config.with_positions(pos), par)

    return -(energy_at(step) - energy_at(-step)) / (2 * step)


class TestLattice:
    def test_equilibrium_lattice_constants_dense_scan(self):
        # dense-scan oracle over the diamond lattice constant
        for element, expected in (("Si", 5.431), ("Ge", 5.654)):
            par = default_parameters(element)
            grid = np.arange(0.9 * expected, 1.1 * expected, 1e-3)
            energies = [sw_energy(diamond_supercell(element, a, reps=(1, 1, 1)), par)
                        for a in grid]
            a_min = grid[int(np.argmin(energies))]
            assert a_min == pytest.approx(expected, abs=5e-3)
        # germanium sits on a larger lattice than silicon
        assert 5.654 > 5.431

    def test_cohesive_energy_si(self):
        # single shell inside the cutoff: E/atom = 2*phi2(r_eq) = -2*eps
        config = diamond_supercell("Si", 5.431, reps=(1, 1, 1))
        per_atom = sw_energy(config, SI) / config.n_atoms
        assert per_atom == pytest.approx(-2 * SI.epsilon, rel=1e-4)


class TestVirial:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_virial_matches_strain_derivative(self, seed):
        rng = np.random.default_rng(seed)
        config = random_liquidish(rng)
        _, _, virial = sw_energy_forces_virial(config, SI)
        eps = 1e-6

        def strained(s):
            scaled = Configuration(cell=config.cell.scaled(1.0 + s),
                                   species=config.species,
                                   positions=config.positions * (1.0 + s))
            return sw_energy(scaled, SI)

        fd = -(strained(eps) - strained(-eps)) / (2 * eps)
        assert virial == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestProvider:
    def test_requires_single_element(self):
        config = Configuration(cell=Cell(10 * np.eye(3)), species=("Si", "Ge"),
                               positions=[[0, 0, 0], [2.5, 0, 0]])
        with pytest.raises(ValueError):
            SWPotential().energy(config)

    def test_dispatches_on_element(self):
        pot = SWPotential()
        e_si = pot.energy(dimer(2.35, "Si"))
        e_ge = pot.energy(dimer(2.35, "Ge"))
        assert e_si != e_ge
        assert e_si == pytest.approx(phi2_reference(2.35, SI), rel=1e-12)
        assert e_ge == pytest.approx(phi2_reference(2.35, GE), rel=1e-12)
