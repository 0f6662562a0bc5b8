import numpy as np
import pytest

from mamforge.structure import Region, Structure, apply_strain, replicate
from mamforge.xyz import Frame, XyzError, parse_frames, parse_structure, write_frame, write_frames


def cubic(a, positions, species, **kw):
    return Structure(
        cell=a * np.eye(3),
        periodic=[True, True, True],
        positions=positions,
        species=species,
        **kw,
    )


def test_structure_validation():
    with pytest.raises(ValueError):
        Structure(cell=np.zeros((3, 3)), periodic=[True, True, True],
                  positions=[[0, 0, 0]], species=[1])
    with pytest.raises(ValueError):
        cubic(5.0, [[0, 0, 0]], [1], masses=[-1.0])
    with pytest.raises(ValueError):
        cubic(5.0, [[0, 0, 0], [1, 1, 1]], [1])  # species length mismatch


def test_default_masses_from_species():
    s = cubic(5.0, [[0, 0, 0], [1, 0, 0]], [1, 8])
    assert s.masses[0] == pytest.approx(1.008)
    assert s.masses[1] == pytest.approx(15.999)


def test_structure_arrays_are_frozen():
    s = cubic(5.0, [[0, 0, 0]], [1])
    with pytest.raises(ValueError):
        s.positions[0, 0] = 1.0


# --- extended-XYZ -------------------------------------------------------

ONE_ATOM = """1
Lattice="10.0 0 0 0 10.0 0 0 0 10.0" Properties=species:S:1:pos:R:3 pbc="T T T"
H 0.0 0.0 0.0
"""


def test_parse_single_hydrogen():
    s = parse_structure(ONE_ATOM)
    assert s.n_atoms == 1
    assert s.species.tolist() == [1]
    assert np.allclose(s.cell, 10.0 * np.eye(3))
    assert s.periodic.all()


def test_parse_missing_lattice_with_pbc_is_error():
    bad = '1\nProperties=species:S:1:pos:R:3 pbc="T T T"\nH 0 0 0\n'
    with pytest.raises(XyzError):
        parse_structure(bad)


def test_parse_unknown_symbol_and_count_mismatch():
    with pytest.raises(ValueError):
        parse_structure('1\nProperties=species:S:1:pos:R:3\nQq 0 0 0\n')
    with pytest.raises(XyzError):
        parse_structure('2\nProperties=species:S:1:pos:R:3\nH 0 0 0\n')


def test_two_frame_file_roundtrip():
    rng = np.random.default_rng(3)
    frames = []
    for k in range(2):
        s = cubic(8.0 + k, rng.uniform(0, 4, (3, 3)), [1, 6, 8],
                  velocities=rng.normal(size=(3, 3)), total_charge=float(k))
        frames.append(Frame(s, energy=-1.5 * (k + 1),
                            forces=rng.normal(size=(3, 3)),
                            charges=rng.normal(size=3)))
    text = write_frames(frames)
    back = parse_frames(text)
    assert len(back) == 2
    for orig, rt in zip(frames, back):
        a, b = orig.structure, rt.structure
        assert np.allclose(a.cell, b.cell, rtol=5e-12, atol=0)
        assert np.allclose(a.positions, b.positions, rtol=5e-12, atol=1e-15)
        assert np.allclose(a.velocities, b.velocities, rtol=5e-12, atol=1e-15)
        assert a.species.tolist() == b.species.tolist()
        assert b.total_charge == pytest.approx(a.total_charge, rel=5e-12)
        assert rt.energy == pytest.approx(orig.energy, rel=5e-12)
        assert np.allclose(orig.forces, rt.forces, rtol=5e-12, atol=1e-15)
        assert np.allclose(orig.charges, rt.charges, rtol=5e-12, atol=1e-15)


def test_roundtrip_many_random_frames():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = rng.integers(1, 6)
        s = Structure(
            cell=rng.uniform(-9, 9, (3, 3)) + 12 * np.eye(3),
            periodic=rng.uniform(size=3) < 0.5,
            positions=rng.uniform(-5, 5, (n, 3)),
            species=rng.integers(1, 80, n),
            total_charge=float(rng.normal()),
        )
        if not s.periodic.any() or abs(np.linalg.det(s.cell)) > 1e-6:
            rt = parse_structure(write_frame(s))
            assert np.allclose(rt.positions, s.positions, rtol=5e-12, atol=1e-15)
            assert np.allclose(rt.cell, s.cell, rtol=5e-12, atol=1e-15)
            assert rt.species.tolist() == s.species.tolist()


# --- strain and replication --------------------------------------------

def test_zero_strain_is_identity():
    s = cubic(10.0, [[1, 2, 3], [4, 5, 6]], [1, 1])
    t = apply_strain(s, np.zeros((3, 3)))
    assert np.array_equal(t.cell, s.cell)
    assert np.array_equal(t.positions, s.positions)


def test_uniaxial_strain_definition():
    s = cubic(10.0, [[0, 0, 0]], [1])
    t = apply_strain(s, np.diag([0.01, 0.0, 0.0]))
    assert np.linalg.norm(t.cell[0]) == pytest.approx(10.1, abs=1e-12)


def test_strain_volume_follows_determinant():
    rng = np.random.default_rng(7)
    s = cubic(9.0, rng.uniform(0, 9, (4, 3)), [6] * 4)
    for _ in range(5):
        eps = 0.02 * rng.standard_normal((3, 3))
        eps = 0.5 * (eps + eps.T)
        t = apply_strain(s, eps)
        ratio = t.volume / s.volume
        assert ratio == pytest.approx(np.linalg.det(np.eye(3) + eps), abs=1e-12)


def test_replicate_identity_and_counts():
    s = cubic(6.0, [[0, 0, 0], [3, 3, 3]], [3, 6])
    same = replicate(s, 1, 1, 1)
    assert same.n_atoms == 2
    assert np.allclose(same.positions, s.positions)
    big = replicate(s, 2, 1, 1)
    assert big.n_atoms == 4
    assert np.allclose(big.cell[0], [12.0, 0, 0])
    assert np.allclose(big.cell[1], [0, 6.0, 0])


def test_replicate_requires_periodicity():
    s = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                  positions=[[0, 0, 0]], species=[1])
    with pytest.raises(ValueError):
        replicate(s, 2, 2, 2)


def test_replicate_preserves_distance_multiset():
    # every copy of the original cell sees the same pair environment
    from mamforge.neighbors import build_neighbor_list

    rng = np.random.default_rng(5)
    s = cubic(8.0, rng.uniform(0, 8, (4, 3)), [6] * 4)
    cutoff = 3.9
    nl0 = build_neighbor_list(s, cutoff)
    nl2 = build_neighbor_list(replicate(s, 2, 2, 2), cutoff)
    d0 = np.sort(np.concatenate([d for d in nl0.distances if len(d)]))
    d2 = np.sort(np.concatenate([d for d in nl2.distances if len(d)]))
    assert len(d2) == 8 * len(d0)
    assert np.allclose(d2, np.repeat(d0, 8), atol=1e-10)


# --- regions ------------------------------------------------------------

def test_region_mask_and_volume():
    s = cubic(10.0, [[1, 1, 1], [6, 1, 1]], [3, 6])
    r = Region(axis=0, lo=0.0, hi=5.0)
    assert r.mask(s).tolist() == [True, False]
    assert r.volume(s) == pytest.approx(500.0)
    only_li = Region(axis=0, lo=0.0, hi=10.0, species=3)
    assert only_li.mask(s).tolist() == [True, False]
    with pytest.raises(ValueError):
        Region(axis=0, lo=2.0, hi=1.0)
