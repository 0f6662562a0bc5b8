"""The trainable interatomic potential.

One shared atomic network maps every atom's fingerprint vector to an
atomic energy; their sum is the short-range energy.  A second network
with the same architecture supplies per-atom electronegativities that
feed the charge-equilibration stage when long-range electrostatics is
enabled.  Because the same weights act on every atom, the total energy
is invariant under relabeling atoms and extends trivially when a cell
is replicated.

Forces are the exact negative gradient of the total energy: network
backpropagation composed with the analytic fingerprint Jacobians, plus,
for the electrostatic path, Coulomb pair terms and a single adjoint
solve of the charge-equilibration KKT system that accounts for how the
equilibrated charges respond to atomic motion.

The static virial comes from the same bond-resolved derivatives:

    W_pq = sum over bonds r_p dE/dr_q,    sigma_static = W / V

with tensile stress positive, and the kinetic part

    sigma_kin = (1/V) sum_k m_k v_kp v_kq

converted from amu (A/fs)^2 to eV.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .constants import AMU_A2_FS2_TO_EV, COVALENT_RADII, symbol_to_z, z_to_symbol
from .descriptors import AcsfParams, DescriptorSet, compute_acsf
from .electrostatics import (
    ChargeSolution,
    QeqSystem,
    coulomb_kernel,
    electrostatic_energy,
    equilibrate_charges,
    kernel_pair_forces,
    solve_kkt,
)
from .neighbors import build_neighbor_list, check_minimum_image
from .network import MLP
from .structure import Structure

MODEL_FORMAT_VERSION = 1
DEFAULT_HARDNESS = 10.0  # eV/e^2
DEFAULT_ELEC_CUTOFF = 15.0  # A


def _ordered_sum(values: np.ndarray) -> float:
    # value-sorted reduction: the result does not depend on atom labels
    return float(np.sum(np.sort(values)))


@dataclass
class PotentialModel:
    """Descriptor hyperparameters, network weights, and element tables."""

    acsf: AcsfParams
    energy_net: MLP
    chi_net: MLP
    alpha: dict[int, float]
    hardness: dict[int, float]
    use_electrostatics: bool = False
    use_charge_input: bool = False
    elec_cutoff: float | None = DEFAULT_ELEC_CUTOFF
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        nf = self.acsf.n_features
        if self.feature_mean is None:
            self.feature_mean = np.zeros(nf)
        if self.feature_scale is None:
            self.feature_scale = np.ones(nf)
        self.feature_mean = np.asarray(self.feature_mean, dtype=float)
        self.feature_scale = np.asarray(self.feature_scale, dtype=float)
        want = nf + (1 if self.use_charge_input else 0)
        if self.energy_net.n_inputs != want:
            raise ValueError("energy network input width does not match descriptors")
        if self.chi_net.n_inputs != nf:
            raise ValueError("chi network input width does not match descriptors")
        for table, name in ((self.alpha, "alpha"), (self.hardness, "hardness")):
            for z, v in table.items():
                if v <= 0:
                    raise ValueError(f"{name}[{z}] must be positive")

    @classmethod
    def create(cls, acsf: AcsfParams | None = None, hidden=(24, 24), seed: int = 0,
               use_electrostatics: bool = False, use_charge_input: bool | None = None,
               elec_cutoff: float | None = DEFAULT_ELEC_CUTOFF,
               alpha: dict[int, float] | None = None,
               hardness: dict[int, float] | None = None) -> "PotentialModel":
        """Fresh model with seeded weight initialization.

        The charge input to the energy network defaults to on whenever
        electrostatics is on, so the atomic energies can see the
        equilibrated charges.
        """
        acsf = acsf or AcsfParams()
        if use_charge_input is None:
            use_charge_input = use_electrostatics
        rng = np.random.default_rng(seed)
        nf = acsf.n_features
        e_in = nf + (1 if use_charge_input else 0)
        energy_net = MLP([e_in, *hidden, 1], seed=rng.integers(2**31))
        chi_net = MLP([nf, *hidden, 1], seed=rng.integers(2**31))
        return cls(
            acsf=acsf,
            energy_net=energy_net,
            chi_net=chi_net,
            alpha=dict(alpha or {}),
            hardness=dict(hardness or {}),
            use_electrostatics=use_electrostatics,
            use_charge_input=use_charge_input,
            elec_cutoff=elec_cutoff,
            seed=seed,
        )

    # -- per-structure element tables -----------------------------------

    def alpha_for(self, species: np.ndarray) -> np.ndarray:
        out = np.empty(len(species))
        for i, z in enumerate(species):
            z = int(z)
            out[i] = self.alpha.get(z, COVALENT_RADII.get(z, 1.0))
        return out

    def hardness_for(self, species: np.ndarray) -> np.ndarray:
        return np.array([self.hardness.get(int(z), DEFAULT_HARDNESS) for z in species])

    def standardize(self, g: np.ndarray) -> np.ndarray:
        return (g - self.feature_mean) / self.feature_scale

    def energy_inputs(self, x: np.ndarray, charges: np.ndarray | None) -> np.ndarray:
        if not self.use_charge_input:
            return x
        if charges is None:
            raise ValueError("model expects charges as network input")
        return np.hstack([x, np.asarray(charges, dtype=float)[:, None]])

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "acsf": self.acsf.to_dict(),
            "energy_net": self.energy_net.to_dict(),
            "chi_net": self.chi_net.to_dict(),
            "alpha": {z_to_symbol(z): v for z, v in sorted(self.alpha.items())},
            "hardness": {z_to_symbol(z): v for z, v in sorted(self.hardness.items())},
            "use_electrostatics": self.use_electrostatics,
            "use_charge_input": self.use_charge_input,
            "elec_cutoff": self.elec_cutoff,
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
        return cls(
            acsf=AcsfParams.from_dict(d["acsf"]),
            energy_net=MLP.from_dict(d["energy_net"]),
            chi_net=MLP.from_dict(d["chi_net"]),
            alpha={symbol_to_z(s): v for s, v in d["alpha"].items()},
            hardness={symbol_to_z(s): v for s, v in d["hardness"].items()},
            use_electrostatics=d["use_electrostatics"],
            use_charge_input=d["use_charge_input"],
            elec_cutoff=d["elec_cutoff"],
            feature_mean=np.array(d["feature_mean"]),
            feature_scale=np.array(d["feature_scale"]),
            seed=d.get("seed", 0),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "PotentialModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Prediction:
    """Everything one evaluation produces."""

    e_total: float
    e_short: float
    e_elec: float
    atom_energies: np.ndarray
    charges: np.ndarray
    chi: np.ndarray | None
    forces: np.ndarray
    volume: float | None = None
    stress_static: np.ndarray | None = None
    stress_kinetic: np.ndarray | None = None
    atom_virials: np.ndarray | None = None   # eV; sum / V = static stress
    mu: float | None = None

    @property
    def stress(self) -> np.ndarray | None:
        if self.stress_static is None:
            return None
        kin = self.stress_kinetic if self.stress_kinetic is not None else 0.0
        return self.stress_static + kin


def _contract_jacobian(d: DescriptorSet, coeff: np.ndarray, n_atoms: int):
    """Chain descriptor cotangents through the fingerprint Jacobians.

    ``coeff[i]`` is dE/dG_i over the n_sym fingerprint entries.  Returns
    (dE/dR, bond virial W, per-atom i-centered virials).  Contributions
    are accumulated in a label-independent order so same-species
    permutations commute bitwise with the result.
    """
    targets, values = [], []
    virial = np.zeros((3, 3))
    atom_virials = np.zeros((n_atoms, 3, 3))
    for i in range(n_atoms):
        contrib = np.einsum("k,kmj->mj", coeff[i], d.jac[i])
        targets.append(d.jac_atoms[i])
        values.append(contrib)
        bonds = d.bond_vectors[i]
        w = bonds.T @ contrib[1:]
        virial += w
        atom_virials[i] += w
    targets = np.concatenate(targets)
    values = np.concatenate(values)
    order = np.lexsort((values[:, 2], values[:, 1], values[:, 0], targets))
    dedr = np.zeros((n_atoms, 3))
    np.add.at(dedr, targets[order], values[order])
    return dedr, virial, atom_virials


def short_range_energy(s: Structure, d: DescriptorSet, m: PotentialModel,
                       charges: np.ndarray | None = None):
    """Summed atomic energies (eV) and the per-atom terms."""
    x = m.standardize(d.values)
    atom_e = m.energy_net.forward(m.energy_inputs(x, charges))
    return _ordered_sum(atom_e), atom_e


def short_range_forces(s: Structure, d: DescriptorSet, m: PotentialModel,
                       charges: np.ndarray | None = None) -> np.ndarray:
    """Negative gradient of the short-range energy at fixed charges."""
    dedr, _, _ = _short_range_pullback(s, d, m, charges)[:3]
    return -dedr


def _short_range_pullback(s, d, m, charges):
    x = m.standardize(d.values)
    inputs = m.energy_inputs(x, charges)
    atom_e, din = m.energy_net.input_gradient(inputs)
    nf = m.acsf.n_features
    coeff = din[:, :nf] / m.feature_scale
    dedr, virial, atom_virials = _contract_jacobian(d, coeff[:, : m.acsf.n_sym], s.n_atoms)
    g_q = din[:, nf] if m.use_charge_input else None
    return dedr, virial, atom_virials, atom_e, g_q


def kinetic_stress(s: Structure, volume: float | None = None) -> np.ndarray:
    """Velocity part of the virial stress, eV/A^3."""
    if s.velocities is None:
        raise ValueError("kinetic stress requires velocities")
    v = _resolve_volume(s, volume)
    if v is None:
        raise ValueError("kinetic stress requires a cell volume or explicit volume")
    w = np.einsum("k,kp,kq->pq", s.masses, s.velocities, s.velocities)
    return AMU_A2_FS2_TO_EV * w / v


def static_stress(s: Structure, d: DescriptorSet, m: PotentialModel,
                  charges: np.ndarray | None = None,
                  volume: float | None = None) -> np.ndarray:
    """Short-range virial stress (eV/A^3), tensile positive."""
    v = _resolve_volume(s, volume)
    if v is None:
        raise ValueError("static stress requires a cell volume or explicit volume")
    _, virial, _ = _short_range_pullback(s, d, m, charges)[:3]
    return virial / v


def _resolve_volume(s: Structure, volume: float | None) -> float | None:
    if volume is not None:
        return float(volume)
    if s.periodic.all():
        return s.volume
    return None


def electronegativities(s: Structure, d: DescriptorSet, m: PotentialModel) -> np.ndarray:
    """Network electronegativities (V), one per atom."""
    return m.chi_net.forward(m.standardize(d.values))


def _equilibrate(s: Structure, d: DescriptorSet, m: PotentialModel):
    alpha = m.alpha_for(s.species)
    hard = m.hardness_for(s.species)
    cutoff = m.elec_cutoff if s.periodic.any() else None
    if s.periodic.any():
        if cutoff is None:
            raise ValueError("periodic electrostatics requires a kernel cutoff")
        check_minimum_image(s, cutoff)
    chi = electronegativities(s, d, m)
    kernel = coulomb_kernel(s, alpha, hard, cutoff)
    sol = equilibrate_charges(QeqSystem(chi, hard, alpha, kernel, s.total_charge))
    return chi, kernel, sol, alpha, cutoff


def electrostatic_forces(s: Structure, d: DescriptorSet, m: PotentialModel,
                         solution: ChargeSolution) -> np.ndarray:
    """Electrostatic force contribution, including the charge response.

    Total derivative of the energy through the electrostatic terms: the
    electronegativity dependence on atomic environments, the Coulomb
    pair interactions, and (when the atomic energies see the charges)
    the response dQ/dR obtained from one adjoint KKT solve.
    """
    x = m.standardize(d.values)
    alpha = m.alpha_for(s.species)
    hard = m.hardness_for(s.species)
    cutoff = m.elec_cutoff if s.periodic.any() else None
    kernel = coulomb_kernel(s, alpha, hard, cutoff)
    q = solution.charges

    if m.use_charge_input:
        _, din = m.energy_net.input_gradient(m.energy_inputs(x, q))
        g_q = din[:, m.acsf.n_features]
        lam = solve_kkt(kernel, g_q, 0.0)[:-1]
    else:
        lam = np.zeros(s.n_atoms)

    _, dchi = m.chi_net.input_gradient(x)
    coeff_chi = ((q - lam)[:, None] * dchi / m.feature_scale)[:, : m.acsf.n_sym]
    dedr, _, _ = _contract_jacobian(d, coeff_chi, s.n_atoms)
    pair_coeff = np.outer(q, q) - np.outer(lam, q) - np.outer(q, lam)
    f_pair = kernel_pair_forces(s, pair_coeff, alpha, cutoff)
    return -dedr + f_pair


def predict(s: Structure, m: PotentialModel, volume: float | None = None) -> Prediction:
    """Full evaluation: energies, charges, forces, and stress tensors."""
    nl = build_neighbor_list(s, m.acsf.cutoff)
    d = compute_acsf(s, nl, m.acsf)
    n = s.n_atoms

    chi = kernel = sol = None
    q = np.zeros(n)
    e_elec = 0.0
    if m.use_electrostatics:
        chi, kernel, sol, alpha, cutoff = _equilibrate(s, d, m)
        q = sol.charges
        e_elec = electrostatic_energy(q, kernel, chi)

    dedr, virial, atom_virials, atom_e, g_q = _short_range_pullback(
        s, d, m, q if m.use_charge_input else None
    )
    e_short = _ordered_sum(atom_e)

    if m.use_electrostatics:
        if g_q is not None and np.any(g_q):
            lam = solve_kkt(kernel, g_q, 0.0)[:-1]
        else:
            lam = np.zeros(n)
        _, dchi = m.chi_net.input_gradient(m.standardize(d.values))
        coeff_chi = ((q - lam)[:, None] * dchi / m.feature_scale)[:, : m.acsf.n_sym]
        dedr_chi, virial_chi, av_chi = _contract_jacobian(d, coeff_chi, n)
        dedr += dedr_chi
        virial += virial_chi
        atom_virials += av_chi
        pair_coeff = np.outer(q, q) - np.outer(lam, q) - np.outer(q, lam)
        f_pair = kernel_pair_forces(s, pair_coeff, alpha, cutoff,
                                    virial=virial, per_atom_virial=atom_virials)
        forces = -dedr + f_pair
    else:
        forces = -dedr

    v = _resolve_volume(s, volume)
    stress_static = virial / v if v else None
    stress_kin = None
    if v and s.velocities is not None:
        stress_kin = kinetic_stress(s, v)
    return Prediction(
        e_total=e_short + e_elec,
        e_short=e_short,
        e_elec=e_elec,
        atom_energies=atom_e,
        charges=q,
        chi=chi,
        forces=forces,
        volume=v,
        stress_static=stress_static,
        stress_kinetic=stress_kin,
        atom_virials=atom_virials if v else None,
        mu=None if sol is None else sol.mu,
    )
