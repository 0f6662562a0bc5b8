import numpy as np
import pytest

from mamforge.neighbors import build_neighbor_list, perpendicular_widths
from mamforge.structure import Structure


def brute_force_pairs(s, cutoff, max_images=2):
    """All-images O(N^2) reference scan: returns {(i, j): distance} with the
    smallest image distance per pair."""
    n = s.n_atoms
    shifts = [np.zeros(3)]
    if s.periodic.any():
        rng = range(-max_images, max_images + 1)
        shifts = [
            i * s.cell[0] + j * s.cell[1] + k * s.cell[2]
            for i in (rng if s.periodic[0] else [0])
            for j in (rng if s.periodic[1] else [0])
            for k in (rng if s.periodic[2] else [0])
        ]
    pairs = {}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            best = min(
                np.linalg.norm(s.positions[j] + sh - s.positions[i]) for sh in shifts
            )
            if best <= cutoff:
                pairs[(i, j)] = best
    return pairs


def as_pair_dict(nl):
    out = {}
    for i, (idx, dist) in enumerate(zip(nl.indices, nl.distances)):
        for j, d in zip(idx, dist):
            out[(i, int(j))] = d
    return out


def test_free_dimer():
    s = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                  positions=[[0, 0, 0], [3, 0, 0]], species=[1, 1])
    nl = build_neighbor_list(s, 8.9)
    assert nl.n_neighbors(0) == 1 and nl.n_neighbors(1) == 1
    assert nl.distances[0][0] == pytest.approx(3.0)
    assert np.allclose(nl.vectors[0][0], [3, 0, 0])
    assert np.allclose(nl.vectors[1][0], [-3, 0, 0])


def test_isolated_periodic_atom_has_no_neighbors():
    s = Structure(cell=20.0 * np.eye(3), periodic=[True] * 3,
                  positions=[[1, 1, 1]], species=[6])
    nl = build_neighbor_list(s, 8.9)
    assert nl.n_neighbors(0) == 0


def test_cell_too_small_raises():
    s = Structure(cell=10.0 * np.eye(3), periodic=[True] * 3,
                  positions=[[0, 0, 0]], species=[6])
    with pytest.raises(ValueError, match="minimum image"):
        build_neighbor_list(s, 6.0)
    with pytest.raises(ValueError):
        build_neighbor_list(s, -1.0)


@pytest.mark.parametrize("seed", range(6))
def test_matches_brute_force_all_images(seed):
    rng = np.random.default_rng(seed)
    cell = 9.0 * np.eye(3) + rng.uniform(-0.8, 0.8, (3, 3))
    periodic = [True, True, seed % 2 == 0]
    s = Structure(cell=cell, periodic=periodic,
                  positions=rng.uniform(0, 9, (30, 3)),
                  species=rng.integers(1, 10, 30))
    cutoff = 0.45 * perpendicular_widths(cell).min()
    nl = build_neighbor_list(s, cutoff)
    got = as_pair_dict(nl)
    want = brute_force_pairs(s, cutoff)
    assert set(got) == set(want)
    for key in want:
        assert got[key] == pytest.approx(want[key], abs=1e-10)


def test_displacement_consistency_and_symmetry():
    rng = np.random.default_rng(42)
    s = Structure(cell=12.0 * np.eye(3), periodic=[True] * 3,
                  positions=rng.uniform(0, 12, (20, 3)),
                  species=[6] * 20)
    nl = build_neighbor_list(s, 5.5)
    for i in range(s.n_atoms):
        for j, vec, d in zip(nl.indices[i], nl.vectors[i], nl.distances[i]):
            assert 0 < d <= 5.5
            assert np.linalg.norm(vec) == pytest.approx(d, abs=1e-10)
            # mirrored entry with negated displacement
            k = list(nl.indices[j]).index(i)
            assert np.allclose(nl.vectors[j][k], -vec, atol=1e-12)
