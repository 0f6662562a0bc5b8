"""Neighbor lists under the minimum-image convention.

Only the nearest periodic image of each pair is considered, which is
exact as long as the cutoff does not exceed half the perpendicular
width of the cell in every periodic direction; the builder enforces
that precondition instead of enumerating further images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .structure import Structure


@dataclass(frozen=True)
class NeighborList:
    """Per-atom neighbor arrays.

    ``vectors[i][k]`` is the minimum-image displacement from atom ``i``
    to its ``k``-th neighbor (R_j - R_i), ``distances[i][k]`` its norm.
    """

    cutoff: float
    indices: list[np.ndarray]
    vectors: list[np.ndarray]
    distances: list[np.ndarray]

    def n_neighbors(self, i: int) -> int:
        return len(self.indices[i])


def perpendicular_widths(cell: np.ndarray) -> np.ndarray:
    """Distance between the two cell faces spanned by the other two vectors."""
    vol = abs(np.linalg.det(cell))
    widths = np.empty(3)
    for a in range(3):
        cross = np.cross(cell[(a + 1) % 3], cell[(a + 2) % 3])
        widths[a] = vol / np.linalg.norm(cross)
    return widths


def check_minimum_image(s: Structure, cutoff: float) -> None:
    if not s.periodic.any():
        return
    widths = perpendicular_widths(s.cell)
    for a in range(3):
        if s.periodic[a] and widths[a] < 2.0 * cutoff:
            raise ValueError(
                f"cell too small for minimum image: width {widths[a]:.3f} A "
                f"along axis {a} < 2 x cutoff {cutoff:.3f} A"
            )


def build_neighbor_list(s: Structure, cutoff: float) -> NeighborList:
    """All pairs with minimum-image distance <= cutoff.

    Raises if the cutoff is nonpositive or the cell violates the
    minimum-image precondition in a periodic direction.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    check_minimum_image(s, cutoff)

    n = s.n_atoms
    indices = [[] for _ in range(n)]
    vectors = [[] for _ in range(n)]
    distances = [[] for _ in range(n)]

    pos = s.positions
    for i in range(n - 1):
        disp = s.minimum_image(pos[i + 1 :] - pos[i])
        dist = np.linalg.norm(disp, axis=1)
        for k in np.nonzero(dist <= cutoff)[0]:
            j = i + 1 + k
            indices[i].append(j)
            vectors[i].append(disp[k])
            distances[i].append(dist[k])
            indices[j].append(i)
            vectors[j].append(-disp[k])
            distances[j].append(dist[k])

    # Sort each atom's neighbors geometrically (distance, then displacement
    # components) so downstream reductions run in an order independent of
    # atom labels; same-species permutations then commute exactly.
    out_idx, out_vec, out_dist = [], [], []
    for ix, v, dist in zip(indices, vectors, distances):
        ix = np.array(ix, dtype=int)
        v = np.array(v).reshape(len(v), 3)
        dist = np.array(dist)
        order = np.lexsort((v[:, 2], v[:, 1], v[:, 0], dist))
        out_idx.append(ix[order])
        out_vec.append(v[order])
        out_dist.append(dist[order])

    return NeighborList(cutoff=float(cutoff), indices=out_idx,
                        vectors=out_vec, distances=out_dist)
