"""Atomic configurations: immutable structure container and geometry ops.

Cells are stored as 3x3 matrices whose *rows* are the lattice vectors.
Cartesian positions, Angstrom everywhere.  Structures are frozen after
construction so they can be shared freely between threads; geometry
operations return new objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constants import ATOMIC_MASSES


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Structure:
    """Atomic configuration.

    Parameters
    ----------
    cell : (3, 3) array
        Lattice vectors as rows, in Angstrom.  May be zero for fully
        non-periodic systems.
    periodic : (3,) bool array
        Periodicity flags per lattice direction.
    positions : (N, 3) array
        Cartesian coordinates in Angstrom.
    species : (N,) int array
        Atomic numbers.
    masses : (N,) array, optional
        Atomic masses in amu; defaults to standard atomic weights.
    velocities : (N, 3) array, optional
        Velocities in Angstrom/fs.
    total_charge : float
        Net charge of the system in units of e.
    """

    cell: np.ndarray
    periodic: np.ndarray
    positions: np.ndarray
    species: np.ndarray
    masses: np.ndarray | None = None
    velocities: np.ndarray | None = None
    total_charge: float = 0.0

    def __post_init__(self):
        cell = _readonly(np.asarray(self.cell, dtype=float).reshape(3, 3))
        periodic = np.asarray(self.periodic, dtype=bool).reshape(3).copy()
        periodic.flags.writeable = False
        positions = _readonly(np.atleast_2d(self.positions))
        species = np.ascontiguousarray(self.species, dtype=int).reshape(-1)
        species.flags.writeable = False

        n = len(positions)
        if n < 1:
            raise ValueError("structure must contain at least one atom")
        if positions.shape != (n, 3):
            raise ValueError(f"positions must be (N, 3), got {positions.shape}")
        if species.shape != (n,):
            raise ValueError("species and positions lengths differ")

        if self.masses is None:
            masses = np.array([ATOMIC_MASSES.get(int(z), 1.0) for z in species])
        else:
            masses = np.asarray(self.masses, dtype=float).reshape(-1)
        if masses.shape != (n,):
            raise ValueError("masses and positions lengths differ")
        if np.any(masses <= 0):
            raise ValueError("masses must be positive")
        masses = _readonly(masses)

        velocities = self.velocities
        if velocities is not None:
            velocities = _readonly(np.atleast_2d(velocities))
            if velocities.shape != (n, 3):
                raise ValueError("velocities must be (N, 3)")

        if periodic.any() and abs(np.linalg.det(cell)) <= 0.0:
            raise ValueError("periodic structure requires a nonsingular cell")

        object.__setattr__(self, "cell", cell)
        object.__setattr__(self, "periodic", periodic)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "velocities", velocities)
        object.__setattr__(self, "total_charge", float(self.total_charge))

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    @property
    def volume(self) -> float:
        """Cell volume in A^3 (absolute determinant)."""
        return float(abs(np.linalg.det(self.cell)))

    def with_positions(self, positions: np.ndarray) -> "Structure":
        return replace(self, positions=np.array(positions))

    def minimum_image(self, disp: np.ndarray) -> np.ndarray:
        """Map Cartesian displacement vectors to their nearest periodic image.

        Only periodic directions are wrapped.  Valid whenever no relevant
        distance exceeds half the corresponding perpendicular cell width.
        """
        disp = np.atleast_2d(disp)
        if not self.periodic.any():
            return disp
        frac = disp @ np.linalg.inv(self.cell)
        shift = np.where(self.periodic, np.round(frac), 0.0)
        return disp - shift @ self.cell


def apply_strain(s: Structure, eps: np.ndarray) -> Structure:
    """Deform a structure by a small strain tensor.

    The strain is symmetrized, the cell maps to ``cell @ (I + eps)`` and
    positions follow affinely, so fractional coordinates are preserved.
    """
    eps = np.asarray(eps, dtype=float).reshape(3, 3)
    eps = 0.5 * (eps + eps.T)
    f = np.eye(3) + eps
    new_cell = s.cell @ f
    if s.periodic.any() and abs(np.linalg.det(new_cell)) <= 0.0:
        raise ValueError("strain makes the cell singular")
    return replace(s, cell=new_cell, positions=s.positions @ f)


def replicate(s: Structure, nx: int, ny: int, nz: int) -> Structure:
    """Build an (nx, ny, nz) supercell of a fully periodic structure."""
    if not s.periodic.all():
        raise ValueError("replicate requires a fully periodic structure")
    if min(nx, ny, nz) < 1:
        raise ValueError("replication factors must be >= 1")
    reps = [(i, j, k) for i in range(nx) for j in range(ny) for k in range(nz)]
    shifts = np.array(reps, dtype=float) @ s.cell
    positions = (s.positions[None, :, :] + shifts[:, None, :]).reshape(-1, 3)
    tile = len(reps)
    velocities = None if s.velocities is None else np.tile(s.velocities, (tile, 1))
    return Structure(
        cell=s.cell * np.array([[nx], [ny], [nz]], dtype=float),
        periodic=s.periodic,
        positions=positions,
        species=np.tile(s.species, tile),
        masses=np.tile(s.masses, tile),
        velocities=velocities,
        total_charge=s.total_charge * tile,
    )


@dataclass(frozen=True)
class Region:
    """Axis-aligned slab selector: ``lo <= position[axis] < hi``.

    An optional species filter restricts the selection to one element.
    """

    axis: int
    lo: float
    hi: float
    species: int | None = None

    def __post_init__(self):
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")
        if not self.lo < self.hi:
            raise ValueError("region requires lo < hi")

    def mask(self, s: Structure) -> np.ndarray:
        x = s.positions[:, self.axis]
        m = (x >= self.lo) & (x < self.hi)
        if self.species is not None:
            m &= s.species == self.species
        return m

    def volume(self, s: Structure) -> float:
        """Slab volume inside the cell; requires the cell axis-aligned
        along the slab axis."""
        col = s.cell[:, self.axis]
        extent = s.cell[self.axis, self.axis]
        off_axis = np.delete(col, self.axis)
        if extent <= 0 or np.any(np.abs(off_axis) > 1e-9 * max(extent, 1.0)):
            raise ValueError("region volume requires an axis-aligned cell")
        width = min(self.hi, extent) - max(self.lo, 0.0)
        if width <= 0:
            return 0.0
        return s.volume * width / extent
