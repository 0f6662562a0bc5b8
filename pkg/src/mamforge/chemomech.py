"""Closed-form electro-chemo-mechanics analyzers.

Pure, deterministic formulas: interface adhesion and potential
gradients, interphase and SEI formation energies, polycrystal moduli
from the stiffness matrix, stress-strain elastic constants, sliding
traction profiles, intercalation voltages, diffusion-limited rate
bounds, and octahedral distortion measures.  Energies arrive in eV and
geometry in Angstrom; converted outputs carry their unit in the name.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .constants import EV_A2_TO_J_M2, EV_A3_TO_GPA
from .structure import Structure, apply_strain


@dataclass(frozen=True)
class EnergyTriple:
    """Slab energies and interface area for adhesion work."""

    e1_tot: float
    e2_tot: float
    e12_tot: float
    area: float  # A^2

    def __post_init__(self):
        if self.area <= 0:
            raise ValueError("interface area must be positive")


def work_of_separation(t: EnergyTriple) -> dict[str, float]:
    """Reversible work to split the joined system into the two slabs.

    Returns the value in both native eV/A^2 and J/m^2.
    """
    w = (t.e1_tot + t.e2_tot - t.e12_tot) / t.area
    return {"wsep_ev_a2": w, "wsep_j_m2": w * EV_A2_TO_J_M2}


def potential_gradient(u1: float, u2: float, d: float) -> float:
    """Electrostatic potential gradient across an interface gap (V/A)."""
    if d <= 0:
        raise ValueError("interface gap must be positive")
    return (u1 - u2) / d


def interphase_formation_energy(e_d: float, e_electrolyte: float) -> float:
    """Energy of the interphase relative to the pristine electrolyte (eV)."""
    return e_d - e_electrolyte


def sei_formation_energy(e_sei: float, e_x: float, e_electrolyte: float,
                         n_x: int) -> float:
    """Formation energy per reacted intercalant atom (eV/atom)."""
    if n_x < 1:
        raise ValueError("need at least one reacted atom")
    return (e_sei - (e_x + e_electrolyte)) / n_x


@dataclass(frozen=True)
class VoigtTensor:
    """6x6 stiffness matrix in Voigt notation, GPa."""

    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(6, 6)
        if np.max(np.abs(c - c.T)) > 1e-9:
            raise ValueError("stiffness matrix must be symmetric to 1e-9 GPa")
        c = 0.5 * (c + c.T)
        c.flags.writeable = False
        object.__setattr__(self, "c", c)

    @classmethod
    def isotropic(cls, lam: float, mu: float) -> "VoigtTensor":
        c = np.zeros((6, 6))
        c[:3, :3] = lam
        c[np.diag_indices(3)] = lam + 2 * mu
        c[3:, 3:] = mu * np.eye(3)
        return cls(c)


@dataclass(frozen=True)
class Moduli:
    """Voigt-average bulk and shear moduli (GPa)."""

    bulk: float
    shear: float

    @property
    def young(self) -> float:
        denom = 3.0 * self.bulk + self.shear
        if denom == 0:
            raise ValueError("Young's modulus undefined: 3B + G = 0")
        return 9.0 * self.bulk * self.shear / denom


def voigt_moduli(t: VoigtTensor) -> Moduli:
    """Polycrystal averages from the stiffness matrix.

    B = ((C11+C22+C33) + 2(C12+C13+C23)) / 9
    G = ((C11+C22+C33) - (C12+C13+C23)) / 15 + (C44+C55+C66) / 5
    """
    c = t.c
    diag = c[0, 0] + c[1, 1] + c[2, 2]
    off = c[0, 1] + c[0, 2] + c[1, 2]
    shear_diag = c[3, 3] + c[4, 4] + c[5, 5]
    return Moduli(bulk=(diag + 2 * off) / 9.0,
                  shear=(diag - off) / 15.0 + shear_diag / 5.0)


RELAXED_FORCE_GATE = 1e-3  # eV/A


def _stress_gpa(s: Structure, calculator) -> np.ndarray:
    w = calculator.atom_virials(s).sum(axis=0)
    return w / s.volume * EV_A3_TO_GPA


def elastic_constants(s: Structure, calculator, delta: float = 1e-3) -> VoigtTensor:
    """Stiffness matrix from central stress differences over small strains.

    Applies the six Voigt strains at +-delta (engineering shear
    convention: off-diagonal tensor strain delta/2) and differentiates
    the stress.  Requires a relaxed input so residual stress does not
    contaminate the constants.
    """
    if not 1e-4 <= delta <= 1e-2:
        raise ValueError("delta must lie in [1e-4, 1e-2]")
    fmax = float(np.max(np.abs(calculator.forces(s))))
    if fmax > RELAXED_FORCE_GATE:
        raise ValueError(
            f"structure not relaxed: max |F| = {fmax:.2e} eV/A exceeds {RELAXED_FORCE_GATE}"
        )
    voigt_pairs = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
    c = np.zeros((6, 6))
    for k, (p, q) in enumerate(voigt_pairs):
        eps = np.zeros((3, 3))
        eps[p, q] = eps[q, p] = delta if p == q else delta / 2.0
        sig_p = _stress_gpa(apply_strain(s, eps), calculator)
        sig_m = _stress_gpa(apply_strain(s, -eps), calculator)
        dsig = (sig_p - sig_m) / (2.0 * delta)
        c[:, k] = [dsig[0, 0], dsig[1, 1], dsig[2, 2], dsig[1, 2], dsig[0, 2], dsig[0, 1]]
    return VoigtTensor(0.5 * (c + c.T))


@dataclass(frozen=True)
class SlidingProfile:
    """Work of separation sampled along a sliding coordinate.

    ``l`` in Angstrom, strictly increasing; ``wsep`` in J/m^2.
    """

    l: np.ndarray
    wsep: np.ndarray

    def __post_init__(self):
        l = np.asarray(self.l, dtype=float)
        w = np.asarray(self.wsep, dtype=float)
        if l.ndim != 1 or l.shape != w.shape or len(l) < 3:
            raise ValueError("profile needs >= 3 matching samples")
        if np.any(np.diff(l) <= 0):
            raise ValueError("sliding coordinate must be strictly increasing")
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "wsep", w)


def sliding_traction(p: SlidingProfile) -> tuple[np.ndarray, float]:
    """Interfacial traction -dW_sep/dl on the sample grid (J/m^2/A).

    Central differences in the interior, one-sided at the ends; the
    critical shear stress to start sliding is the largest magnitude.
    """
    steps = np.diff(p.l)
    if np.allclose(steps, steps[0], rtol=1e-12, atol=0.0):
        traction = -np.gradient(p.wsep, steps[0])
    else:
        traction = -np.gradient(p.wsep, p.l)
    return traction, float(np.max(np.abs(traction)))


def intercalation_voltage(delta_e_f: float, n: int) -> float:
    """Average voltage -dEf/n for n inserted ions (V)."""
    if n < 1:
        raise ValueError("need at least one intercalated ion")
    return -delta_e_f / n


def diffusion_kinetics(lam_cm: float, d_cm2_s: float) -> dict[str, float]:
    """Diffusion time tau = lambda^2/D (s) and max C-rate 3600 D/lambda^2 (1/h)."""
    if lam_cm <= 0 or d_cm2_s <= 0:
        raise ValueError("length and diffusivity must be positive")
    tau = lam_cm**2 / d_cm2_s
    return {"tau_s": tau, "c_rate_per_h": 3600.0 / tau}


def octahedral_distortion(s: Structure, center: int, ligands) -> dict[str, float]:
    """Distortion measures of a six-coordinate site.

    * bond-angle variance: sum over the 12 cis angles of (theta - 90)^2 / 11, deg^2
    * quadratic elongation: mean (l_i / l_0)^2 with l_0 the center-vertex
      distance of the regular octahedron of equal volume
    * off-centering: distance from the center atom to the ligand centroid, A

    Trans pairs are identified greedily as the three disjoint pairs with
    the largest inter-ligand angles.
    """
    ligands = list(ligands)
    if len(ligands) != 6 or len(set(ligands)) != 6 or center in ligands:
        raise ValueError("need six distinct ligand indices, none equal to center")
    disp = s.minimum_image(s.positions[ligands] - s.positions[center])
    lengths = np.linalg.norm(disp, axis=1)
    if np.any(lengths < 1e-6):
        raise ValueError("degenerate geometry: ligand coincides with center")
    pair_sep = np.linalg.norm(disp[:, None, :] - disp[None, :, :], axis=-1)
    if np.min(pair_sep[np.triu_indices(6, k=1)]) < 1e-6:
        raise ValueError("degenerate geometry: coincident ligands")

    cosines = np.clip((disp @ disp.T) / np.outer(lengths, lengths), -1.0, 1.0)
    pairs = [(a, b) for a in range(6) for b in range(a + 1, 6)]
    angles = {pq: np.degrees(np.arccos(cosines[pq])) for pq in pairs}
    used: set[int] = set()
    trans: list[tuple[int, int]] = []
    for (a, b) in sorted(pairs, key=lambda pq: -angles[pq]):
        if a not in used and b not in used:
            trans.append((a, b))
            used.update((a, b))
            if len(trans) == 3:
                break
    cis = [pq for pq in pairs if pq not in trans]
    variance = float(sum((angles[pq] - 90.0) ** 2 for pq in cis) / 11.0)

    try:
        volume = ConvexHull(disp).volume
    except QhullError as err:
        raise ValueError("degenerate geometry: ligands are not in general position") from err
    l0 = (3.0 * volume / 4.0) ** (1.0 / 3.0)
    elongation = float(np.mean((lengths / l0) ** 2))
    off_center = float(np.linalg.norm(disp.mean(axis=0)))
    return {
        "angle_variance_deg2": variance,
        "quadratic_elongation": elongation,
        "off_center_a": off_center,
    }
