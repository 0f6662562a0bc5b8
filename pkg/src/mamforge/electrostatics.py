"""Non-local charge transfer: charge equilibration over a smeared Coulomb kernel.

Atomic charges are not predicted directly.  The network supplies local
electronegativities chi_i, and the charges minimize

    E_elec(Q) = sum_i (chi_i Q_i + 1/2 A_ii Q_i^2) + sum_{i<j} A_ij Q_i Q_j

subject to sum_i Q_i = Q_tot.  The interaction matrix couples Gaussian
charge densities of per-element width alpha:

    A_ij = k_e erf(R_ij / (sqrt(2) gamma_ij)) / R_ij,   gamma_ij = sqrt(alpha_i^2 + alpha_j^2)
    A_ii = J_i + k_e / (alpha_i sqrt(pi))

with the hardness J_i and the Gaussian self-interaction on the diagonal.
Because every atom couples to every other one through the constrained
minimization, a perturbation anywhere shifts charges everywhere; that is
the long-range behavior the short-range network alone cannot express.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .constants import COULOMB_EV_A
from .structure import Structure

DENSE_SOLVE_LIMIT = 2000
CONDITION_LIMIT = 1e12


@dataclass
class QeqSystem:
    """Assembled charge-equilibration problem."""

    chi: np.ndarray       # electronegativities, V
    hardness: np.ndarray  # J_i, eV/e^2
    alpha: np.ndarray     # Gaussian widths, A
    kernel: np.ndarray    # symmetric N x N interaction matrix, eV/e^2
    q_total: float = 0.0

    def __post_init__(self):
        n = len(self.chi)
        if self.kernel.shape != (n, n):
            raise ValueError("kernel shape does not match chi")
        if not np.allclose(self.kernel, self.kernel.T, atol=1e-12):
            raise ValueError("kernel must be symmetric")
        if np.any(np.diag(self.kernel) <= 0):
            raise ValueError("kernel diagonal must be positive")


@dataclass
class ChargeSolution:
    charges: np.ndarray
    mu: float             # common electronegativity dE/dQ_i at the solution, V
    residual: float


def pair_kernel(r: np.ndarray, gamma: np.ndarray, cutoff: float | None = None):
    """Smeared Coulomb interaction and its distance derivative.

    With a cutoff the interaction is shifted so value and slope both
    vanish there, keeping energies and forces continuous as pairs cross.
    """
    r = np.asarray(r, dtype=float)
    arg = r / (np.sqrt(2.0) * gamma)
    k = COULOMB_EV_A * erf(arg) / r
    dk = COULOMB_EV_A * (
        np.sqrt(2.0 / np.pi) / gamma * np.exp(-(arg**2)) / r - erf(arg) / r**2
    )
    if cutoff is not None:
        argc = cutoff / (np.sqrt(2.0) * gamma)
        kc = COULOMB_EV_A * erf(argc) / cutoff
        dkc = COULOMB_EV_A * (
            np.sqrt(2.0 / np.pi) / gamma * np.exp(-(argc**2)) / cutoff - erf(argc) / cutoff**2
        )
        inside = r <= cutoff
        k = np.where(inside, k - kc - (r - cutoff) * dkc, 0.0)
        dk = np.where(inside, dk - dkc, 0.0)
    return k, dk


def coulomb_kernel(s: Structure, alpha: np.ndarray, hardness: np.ndarray,
                   cutoff: float | None = None) -> np.ndarray:
    """Assemble the full N x N interaction matrix for a structure."""
    alpha = np.asarray(alpha, dtype=float)
    hardness = np.asarray(hardness, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("Gaussian widths must be positive")
    n = s.n_atoms
    kernel = np.zeros((n, n))
    for i in range(n - 1):
        disp = s.minimum_image(s.positions[i + 1 :] - s.positions[i])
        r = np.linalg.norm(disp, axis=1)
        if np.any(r < 1e-8):
            raise ValueError(f"coincident atoms near atom {i}")
        gamma = np.sqrt(alpha[i] ** 2 + alpha[i + 1 :] ** 2)
        k, _ = pair_kernel(r, gamma, cutoff)
        kernel[i, i + 1 :] = k
        kernel[i + 1 :, i] = k
    kernel[np.diag_indices(n)] = hardness + COULOMB_EV_A / (alpha * np.sqrt(np.pi))
    return kernel


def _kkt_matrix(kernel: np.ndarray) -> np.ndarray:
    n = len(kernel)
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = kernel
    kkt[:n, n] = 1.0
    kkt[n, :n] = 1.0
    return kkt


def solve_kkt(kernel: np.ndarray, rhs_top: np.ndarray, rhs_bottom: float) -> np.ndarray:
    """Solve the charge-conservation KKT system for one right-hand side."""
    n = len(kernel)
    kkt = _kkt_matrix(kernel)
    rhs = np.concatenate([rhs_top, [rhs_bottom]])
    if n + 1 <= DENSE_SOLVE_LIMIT:
        cond = np.linalg.cond(kkt)
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise np.linalg.LinAlgError(
                f"charge-equilibration system ill-conditioned (cond ~ {cond:.2e})"
            )
        return np.linalg.solve(kkt, rhs)
    from scipy.sparse.linalg import minres

    x, info = minres(kkt, rhs, rtol=1e-12)
    if info != 0:
        raise np.linalg.LinAlgError("iterative KKT solve failed to converge")
    return x


def equilibrate_charges(sys: QeqSystem) -> ChargeSolution:
    """Constrained minimizer of the quadratic charge energy.

    Solves the (N+1) KKT linear system; the reported multiplier is the
    equalized electronegativity dE_elec/dQ_i at the solution.
    """
    x = solve_kkt(sys.kernel, -sys.chi, sys.q_total)
    q, nu = x[:-1], x[-1]
    grad = sys.chi + sys.kernel @ q
    mu = -float(nu)
    residual = float(np.max(np.abs(grad - mu)))
    return ChargeSolution(charges=q, mu=mu, residual=residual)


def electrostatic_energy(q: np.ndarray, kernel: np.ndarray, chi: np.ndarray) -> float:
    """Quadratic charge energy at given charges (eV)."""
    q = np.asarray(q, dtype=float)
    return float(chi @ q + 0.5 * q @ kernel @ q)


def frozen_charge_forces(s: Structure, q: np.ndarray, alpha: np.ndarray,
                         cutoff: float | None = None) -> np.ndarray:
    """Forces from the pair kernel at fixed charges (approximate fast mode).

    Ignores the position dependence of chi and of the charges; exact for
    externally imposed static charges.
    """
    q = np.asarray(q, dtype=float)
    return kernel_pair_forces(s, np.outer(q, q), alpha, cutoff)


def kernel_pair_forces(s: Structure, coeff: np.ndarray, alpha: np.ndarray,
                       cutoff: float | None = None,
                       virial: np.ndarray | None = None,
                       per_atom_virial: np.ndarray | None = None) -> np.ndarray:
    """Forces -d/dR of sum_{i<j} coeff_ij k(R_ij) for a symmetric coefficient
    matrix; optionally accumulates dE/deps virials."""
    n = s.n_atoms
    forces = np.zeros((n, 3))
    alpha = np.asarray(alpha, dtype=float)
    for i in range(n - 1):
        disp = s.minimum_image(s.positions[i + 1 :] - s.positions[i])
        r = np.linalg.norm(disp, axis=1)
        gamma = np.sqrt(alpha[i] ** 2 + alpha[i + 1 :] ** 2)
        _, dk = pair_kernel(r, gamma, cutoff)
        c = coeff[i, i + 1 :]
        grad = (c * dk / r)[:, None] * disp  # dE/dR_j rows
        forces[i + 1 :] -= grad
        forces[i] += grad.sum(axis=0)
        if virial is not None:
            w = disp.T @ grad
            virial += w
            if per_atom_virial is not None:
                per_atom_virial[i] += 0.5 * w
                np.add.at(per_atom_virial, np.arange(i + 1, n),
                          0.5 * np.einsum("pa,pb->pab", disp, grad))
    return forces
