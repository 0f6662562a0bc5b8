import numpy as np
import pytest

from conftest import TEST_ACSF, make_cluster, make_model, make_periodic
from mamforge.descriptors import compute_acsf
from mamforge.neighbors import build_neighbor_list
from mamforge.potential import (
    PotentialModel,
    electronegativities,
    kinetic_stress,
    predict,
    short_range_energy,
    short_range_forces,
    static_stress,
)
from mamforge.structure import Structure, apply_strain, replicate


def descriptors_for(s, m):
    return compute_acsf(s, build_neighbor_list(s, m.acsf.cutoff), m.acsf)


def fd_forces(s, m, h=1e-4):
    n = s.n_atoms
    out = np.zeros((n, 3))
    for b in range(n):
        for c in range(3):
            es = []
            for sgn in (1, -1):
                p = s.positions.copy()
                p[b, c] += sgn * h
                es.append(predict(s.with_positions(p), m).e_total)
            out[b, c] = -(es[0] - es[1]) / (2 * h)
    return out


def fd_static_stress(s, m, h=1e-6):
    v = s.volume
    out = np.zeros((3, 3))
    for p in range(3):
        for q in range(p, 3):
            eps = np.zeros((3, 3))
            eps[p, q] = eps[q, p] = h
            ep = predict(apply_strain(s, eps), m).e_total
            em = predict(apply_strain(s, -eps), m).e_total
            d = (ep - em) / (2 * h) / v
            out[p, q] = out[q, p] = d if p == q else d / 2.0
    return out


# --- short-range energy ---------------------------------------------------

def test_single_atom_is_reference_energy():
    m = make_model()
    s = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                  positions=[[0, 0, 0]], species=[6])
    d = descriptors_for(s, m)
    e, atom_e = short_range_energy(s, d, m)
    x = m.standardize(d.values)
    assert e == pytest.approx(float(m.energy_net.forward(x)[0]), abs=0)
    assert atom_e.shape == (1,)


def test_permutation_invariance_is_exact(rng):
    m = make_model(seed=5)
    s = make_cluster(rng, n=7, species=[6] * 7)
    d = descriptors_for(s, m)
    e0, _ = short_range_energy(s, d, m)
    f0 = short_range_forces(s, d, m)
    perm = rng.permutation(7)
    sp = s.with_positions(s.positions[perm])
    dp = descriptors_for(sp, m)
    e1, _ = short_range_energy(sp, dp, m)
    f1 = short_range_forces(sp, dp, m)
    assert e1 == e0
    assert np.array_equal(f1, f0[perm])


def test_mixed_species_permutation_invariance(rng):
    m = make_model(seed=6)
    species = np.array([3, 3, 6, 6, 8, 8, 14, 14])
    s = make_cluster(rng, n=8, species=species)
    e0 = predict(s, m).e_total
    perm = rng.permutation(8)
    sp = Structure(cell=s.cell, periodic=s.periodic, positions=s.positions[perm],
                   species=species[perm])
    assert predict(sp, m).e_total == e0


def test_dimer_forces_equal_and_opposite():
    m = make_model(seed=2)
    s = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                  positions=[[0, 0, 0], [2.2, 0, 0]], species=[6, 6])
    f = predict(s, m).forces
    assert f[0, 0] == pytest.approx(-f[1, 0], abs=1e-12)
    assert np.allclose(f[:, 1:], 0.0, atol=1e-12)


def test_force_sum_vanishes(rng):
    m = make_model(seed=3)
    s = make_cluster(rng, n=8)
    f = predict(s, m).forces
    assert np.max(np.abs(f.sum(axis=0))) < 1e-8


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_forces_match_fd_short_range(seed):
    rng = np.random.default_rng(seed)
    m = make_model(seed=seed)
    s = make_cluster(rng, n=8)
    got = predict(s, m).forces
    assert np.max(np.abs(got - fd_forces(s, m))) < 1e-6


@pytest.mark.parametrize("charge_input", [False, True])
def test_forces_match_fd_with_qeq(charge_input):
    rng = np.random.default_rng(7)
    m = make_model(seed=11, use_electrostatics=True, use_charge_input=charge_input)
    s = make_cluster(rng, n=6)
    got = predict(s, m).forces
    want = fd_forces(s, m)  # charges re-equilibrated at every displacement
    assert np.max(np.abs(got - want)) < 1e-5


def test_replica_energy_is_eightfold(rng):
    m = make_model(seed=9)
    s = make_periodic(rng, n=6, a=2.2 * TEST_ACSF.cutoff)
    e1 = predict(s, m).e_short
    e8 = predict(replicate(s, 2, 2, 2), m).e_short
    assert e8 == pytest.approx(8.0 * e1, rel=1e-9)


def test_translation_rotation_invariance(rng):
    m = make_model(seed=4)
    s = make_cluster(rng, n=6)
    p0 = predict(s, m)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    moved = s.with_positions(s.positions @ q.T + np.array([3.0, -1.0, 2.0]))
    p1 = predict(moved, m)
    assert abs(p1.e_total - p0.e_total) < 1e-9
    # forces rotate covariantly
    assert np.max(np.abs(p1.forces - p0.forces @ q.T)) < 1e-8


# --- electrostatics integration -------------------------------------------

def test_disabled_electrostatics_reduces_to_short_range(rng):
    m = make_model(seed=1)
    s = make_cluster(rng, n=5)
    p = predict(s, m)
    assert p.e_elec == 0.0
    assert np.all(p.charges == 0.0)
    assert p.e_total == p.e_short


def test_symmetric_neutral_system_has_no_charges():
    m = make_model(seed=8, use_electrostatics=True)
    s = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                  positions=[[0, 0, 0], [2.4, 0, 0]], species=[6, 6])
    p = predict(s, m)
    assert np.allclose(p.charges, 0.0, atol=1e-10)
    assert abs(p.e_elec) < 1e-12


def test_total_is_sum_of_parts(rng):
    m = make_model(seed=10, use_electrostatics=True)
    s = make_cluster(rng, n=5)
    p = predict(s, m)
    assert p.e_total == p.e_short + p.e_elec


def test_identical_environments_same_chi():
    m = make_model(seed=12)
    s = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                  positions=[[0, 0, 0], [2.0, 0, 0]], species=[8, 8])
    d = descriptors_for(s, m)
    chi = electronegativities(s, d, m)
    assert chi[0] == chi[1]


def test_short_range_blind_beyond_cutoff_but_charges_not(rng):
    # the long-range motivation: a distant perturbation shifts local charge
    # while the short-range energy of the far end cannot see it
    m = make_model(seed=13, use_electrostatics=True, use_charge_input=False)
    n = 10
    pos = np.zeros((n, 3))
    pos[:, 0] = 2.0 * np.arange(n)
    s = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                  positions=pos, species=[3] * n)
    p0 = predict(s, m)
    moved = pos.copy()
    moved[0, 1] += 0.4  # perturb one end atom; far end is ~18 A away, Rc = 4 A
    p1 = predict(s.with_positions(moved), m)
    assert abs(p1.charges[-1] - p0.charges[-1]) > 1e-6
    assert p1.atom_energies[-1] == p0.atom_energies[-1]


# --- stress ----------------------------------------------------------------

def test_kinetic_stress_unit_conversion():
    s = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                  positions=[[0, 0, 0]], species=[1], masses=[1.0],
                  velocities=[[1.0, 0, 0]])
    sig = kinetic_stress(s, volume=100.0)
    assert sig[0, 0] == pytest.approx(1.03642691, abs=1e-8)
    sig[0, 0] = 0.0
    assert np.all(sig == 0.0)


def test_kinetic_stress_zero_velocities_and_quadratic():
    cell = 10.0 * np.eye(3)
    s = Structure(cell=cell, periodic=[True] * 3,
                  positions=[[0, 0, 0], [5, 5, 5]], species=[1, 1],
                  masses=[2.0, 2.0], velocities=np.zeros((2, 3)))
    assert np.all(kinetic_stress(s) == 0.0)
    v = np.array([[0.5, 0, 0], [-0.5, 0, 0]])
    s2 = Structure(cell=cell, periodic=[True] * 3, positions=s.positions,
                   species=[1, 1], masses=[2.0, 2.0], velocities=v)
    sig = kinetic_stress(s2)
    # quadratic in v: opposite velocities add, nothing cancels
    assert sig[0, 0] == pytest.approx(2 * 2.0 * 0.25 * 103.642691 / 1000.0, rel=1e-12)


def test_kinetic_stress_requires_velocities():
    s = Structure(cell=10 * np.eye(3), periodic=[True] * 3,
                  positions=[[0, 0, 0]], species=[1])
    with pytest.raises(ValueError):
        kinetic_stress(s)


@pytest.mark.parametrize("seed", [0, 1])
def test_static_stress_matches_strain_fd(seed):
    rng = np.random.default_rng(seed)
    m = make_model(seed=seed)
    s = make_periodic(rng, n=8, a=9.0)
    got = predict(s, m).stress_static
    want = fd_static_stress(s, m)
    assert np.max(np.abs(got - want)) < 1e-6
    assert np.max(np.abs(got - got.T)) < 1e-8


def test_static_stress_with_electrostatics_matches_fd(rng):
    m = make_model(seed=21, use_electrostatics=True, elec_cutoff=4.0)
    s = make_periodic(rng, n=6, a=9.0, species=[3, 3, 8, 8, 8, 8])
    got = predict(s, m).stress_static
    want = fd_static_stress(s, m)
    assert np.max(np.abs(got - want)) < 1e-6


def test_per_atom_virials_sum_to_global(rng):
    m = make_model(seed=14)
    s = make_periodic(rng, n=8, a=9.0)
    p = predict(s, m)
    assert np.allclose(p.atom_virials.sum(axis=0) / p.volume, p.stress_static,
                       atol=1e-12)


def test_short_range_op_stress_matches_predict(rng):
    m = make_model(seed=15)
    s = make_periodic(rng, n=6, a=9.0)
    d = descriptors_for(s, m)
    sig = static_stress(s, d, m)
    assert np.allclose(sig, predict(s, m).stress_static, atol=1e-14)


# --- model file --------------------------------------------------------------

def test_model_json_roundtrip_bitwise(tmp_path, rng):
    m = make_model(seed=17, use_electrostatics=True,
                   alpha={3: 1.21, 8: 0.71}, hardness={3: 9.5, 8: 11.0})
    m.feature_mean = rng.normal(size=m.acsf.n_features)
    m.feature_scale = np.abs(rng.normal(size=m.acsf.n_features)) + 0.5
    path = tmp_path / "model.json"
    m.save(path)
    back = PotentialModel.load(path)
    for a, b in zip(m.energy_net.parameters(), back.energy_net.parameters()):
        assert np.array_equal(a, b)
    for a, b in zip(m.chi_net.parameters(), back.chi_net.parameters()):
        assert np.array_equal(a, b)
    assert np.array_equal(m.feature_mean, back.feature_mean)
    assert back.alpha == m.alpha and back.hardness == m.hardness
    s = make_cluster(rng, n=5, species=[3, 3, 8, 8, 8])
    assert predict(s, back).e_total == predict(s, m).e_total
