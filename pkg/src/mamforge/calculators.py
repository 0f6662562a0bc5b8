"""Energy/force/stress backends behind one duck-typed interface.

Anything with ``energy``, ``forces``, ``energy_and_forces`` and
``atom_virials`` methods works as a calculator: the trained network
potential, the bundled Lennard-Jones oracle used throughout the test
suite, or a biased wrapper that adds external driving forces during
cycling.  Per-atom virials are in eV; summing them and dividing by a
volume gives the static stress, so region sums stay exactly additive.
"""

from __future__ import annotations

import numpy as np

from .neighbors import build_neighbor_list
from .potential import PotentialModel, predict
from .structure import Structure


class LennardJonesCalculator:
    """Truncated, energy-shifted pair potential.

    V(r) = 4 eps ((sigma/r)^12 - (sigma/r)^6) - V_cut  for r <= cutoff.

    Serves as the independent oracle for forces, stress, relaxation and
    training targets; the energy minimum of an isolated pair sits at
    r = 2^(1/6) sigma.
    """

    def __init__(self, epsilon: float = 0.5, sigma: float = 2.2, cutoff: float = 6.0):
        if min(epsilon, sigma, cutoff) <= 0:
            raise ValueError("epsilon, sigma, cutoff must be positive")
        self.epsilon = float(epsilon)
        self.sigma = float(sigma)
        self.cutoff = float(cutoff)
        sr6 = (self.sigma / self.cutoff) ** 6
        self._shift = 4.0 * self.epsilon * (sr6**2 - sr6)

    @property
    def r_min(self) -> float:
        return 2.0 ** (1.0 / 6.0) * self.sigma

    def _pair(self, r: np.ndarray):
        sr6 = (self.sigma / r) ** 6
        v = 4.0 * self.epsilon * (sr6**2 - sr6) - self._shift
        dv = 4.0 * self.epsilon * (-12.0 * sr6**2 + 6.0 * sr6) / r
        return v, dv

    def _all(self, s: Structure):
        nl = build_neighbor_list(s, self.cutoff)
        n = s.n_atoms
        energy = 0.0
        forces = np.zeros((n, 3))
        virials = np.zeros((n, 3, 3))
        for i in range(n):
            if not len(nl.indices[i]):
                continue
            r = nl.distances[i]
            d = nl.vectors[i]  # points i -> j
            v, dv = self._pair(r)
            energy += 0.5 * v.sum()
            # F_i = sum_j V'(r) dhat: repulsive (V' < 0) pushes i away from j
            forces[i] = (dv / r) @ d
            virials[i] = 0.5 * np.einsum("m,ma,mb->ab", dv / r, d, d)
        return energy, forces, virials

    def energy(self, s: Structure) -> float:
        return self._all(s)[0]

    def forces(self, s: Structure) -> np.ndarray:
        return self._all(s)[1]

    def energy_and_forces(self, s: Structure):
        e, f, _ = self._all(s)
        return e, f

    def atom_virials(self, s: Structure) -> np.ndarray:
        return self._all(s)[2]


class PotentialCalculator:
    """Adapter exposing a trained model through the calculator interface."""

    def __init__(self, model: PotentialModel, volume: float | None = None):
        self.model = model
        self.volume = volume

    def energy(self, s: Structure) -> float:
        return predict(s, self.model, volume=self.volume).e_total

    def forces(self, s: Structure) -> np.ndarray:
        return predict(s, self.model, volume=self.volume).forces

    def energy_and_forces(self, s: Structure):
        p = predict(s, self.model, volume=self.volume)
        return p.e_total, p.forces

    def atom_virials(self, s: Structure) -> np.ndarray:
        p = predict(s, self.model, volume=self.volume or 1.0)
        return p.atom_virials


class BiasedCalculator:
    """Base calculator plus a constant external force on selected atoms.

    The bias enters the energy as -f . r so relaxation under bias still
    descends a well-defined objective.
    """

    def __init__(self, base, indices, bias: np.ndarray):
        self.base = base
        self.indices = np.asarray(indices, dtype=int)
        self.bias = np.asarray(bias, dtype=float).reshape(3)

    def energy(self, s: Structure) -> float:
        return self.energy_and_forces(s)[0]

    def forces(self, s: Structure) -> np.ndarray:
        return self.energy_and_forces(s)[1]

    def energy_and_forces(self, s: Structure):
        e, f = self.base.energy_and_forces(s)
        f = f.copy()
        f[self.indices] += self.bias
        e -= float(np.sum(s.positions[self.indices] @ self.bias))
        return e, f

    def atom_virials(self, s: Structure) -> np.ndarray:
        return self.base.atom_virials(s)
