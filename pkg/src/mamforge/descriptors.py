"""Atom-centered symmetry functions with analytic first derivatives.

Radial fingerprints
    G2_i(eta, r_s) = sum_j exp(-eta (R_ij - r_s)^2) f_c(R_ij)

Angular fingerprints (over unordered neighbor pairs j < k of atom i)
    G4_i(eta, zeta, lambda) = 2^(1-zeta) sum_{j<k} (1 + lambda cos t_jik)^zeta
        * exp(-eta (R_ij^2 + R_ik^2 + R_jk^2)) f_c(R_ij) f_c(R_ik) f_c(R_jk)

with the cosine cutoff f_c(R) = (cos(pi R / R_c) + 1) / 2 for R <= R_c and
zero beyond.  Both f_c and its derivative vanish at R_c, so every
fingerprint and its gradient go smoothly to zero as pairs leave the
cutoff sphere.

The scaled atomic number 0.1 Z_i is appended as a final feature so one
shared network can tell chemical species apart; it carries no position
derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .neighbors import NeighborList
from .structure import Structure

Z_FEATURE_SCALE = 0.1


def default_radial_set() -> tuple[tuple[float, float], ...]:
    """Eight Gaussian widths, log-spaced over 0.01 .. 2.0 1/A^2, centered at zero."""
    etas = np.geomspace(0.01, 2.0, 8)
    return tuple((float(e), 0.0) for e in etas)


def default_angular_set() -> tuple[tuple[float, float, float], ...]:
    """zeta in {1, 2, 4, 16} crossed with lambda = +-1 at eta = 0.005 1/A^2."""
    out = []
    for zeta in (1.0, 2.0, 4.0, 16.0):
        for lam in (1.0, -1.0):
            out.append((0.005, zeta, lam))
    return tuple(out)


@dataclass(frozen=True)
class AcsfParams:
    """Symmetry-function hyperparameters.

    ``radial`` entries are (eta, r_s); ``angular`` entries are
    (eta, zeta, lambda).  With ``element_resolved`` each neighbor term is
    weighted by 0.1 Z of the participating neighbors; the default leaves
    the fingerprints element-blind and lets the appended Z feature carry
    composition.
    """

    cutoff: float = 8.9
    radial: tuple[tuple[float, float], ...] = field(default_factory=default_radial_set)
    angular: tuple[tuple[float, float, float], ...] = field(default_factory=default_angular_set)
    element_resolved: bool = False

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        radial = tuple((float(e), float(r)) for e, r in self.radial)
        angular = tuple((float(e), float(z), float(l)) for e, z, l in self.angular)
        if not radial and not angular:
            raise ValueError("need at least one symmetry function")
        for eta, _ in radial:
            if eta < 0:
                raise ValueError("radial eta must be >= 0")
        for eta, zeta, lam in angular:
            if eta < 0 or zeta < 1 or lam not in (-1.0, 1.0):
                raise ValueError("angular set requires eta >= 0, zeta >= 1, lambda = +-1")
        object.__setattr__(self, "radial", radial)
        object.__setattr__(self, "angular", angular)

    @property
    def n_sym(self) -> int:
        return len(self.radial) + len(self.angular)

    @property
    def n_features(self) -> int:
        return self.n_sym + 1

    def to_dict(self) -> dict:
        return {
            "cutoff": self.cutoff,
            "radial": [list(t) for t in self.radial],
            "angular": [list(t) for t in self.angular],
            "element_resolved": self.element_resolved,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AcsfParams":
        return cls(
            cutoff=d["cutoff"],
            radial=tuple(tuple(t) for t in d["radial"]),
            angular=tuple(tuple(t) for t in d["angular"]),
            element_resolved=bool(d.get("element_resolved", False)),
        )


@dataclass
class DescriptorSet:
    """Fingerprint vectors and their sparse position Jacobian.

    ``values[i]`` has length ``n_sym + 1`` (Z feature last).  For atom i,
    ``jac[i][k, m]`` is the gradient of fingerprint k with respect to the
    position of atom ``jac_atoms[i][m]``; column 0 is atom i itself.  The
    Z feature row is omitted because it is identically zero.
    ``bond_vectors[i]`` holds the minimum-image displacements from i to
    ``jac_atoms[i][1:]``, which is what virial accumulation needs.
    """

    values: np.ndarray
    jac_atoms: list[np.ndarray]
    jac: list[np.ndarray]
    bond_vectors: list[np.ndarray]
    params: AcsfParams


def _cutoff_fn(r: np.ndarray, rc: float) -> tuple[np.ndarray, np.ndarray]:
    inside = r <= rc
    x = np.where(inside, np.pi * r / rc, 0.0)
    fc = np.where(inside, 0.5 * (np.cos(x) + 1.0), 0.0)
    dfc = np.where(inside, -0.5 * np.pi / rc * np.sin(x), 0.0)
    return fc, dfc


def compute_acsf(s: Structure, nl: NeighborList, p: AcsfParams) -> DescriptorSet:
    """Evaluate all fingerprints and their analytic position derivatives."""
    if abs(nl.cutoff - p.cutoff) > 1e-12:
        raise ValueError("neighbor list cutoff does not match descriptor cutoff")

    n = s.n_atoms
    n_sym = p.n_sym
    n_rad = len(p.radial)
    rad_eta = np.array([e for e, _ in p.radial])
    rad_rs = np.array([r for _, r in p.radial])
    rc = p.cutoff

    values = np.zeros((n, n_sym + 1))
    values[:, n_sym] = Z_FEATURE_SCALE * s.species
    jac_atoms: list[np.ndarray] = []
    jac: list[np.ndarray] = []
    bond_vectors: list[np.ndarray] = []

    for i in range(n):
        nbr = nl.indices[i]
        m = len(nbr)
        jac_atoms.append(np.concatenate(([i], nbr)))
        bond_vectors.append(nl.vectors[i])
        ji = np.zeros((n_sym, m + 1, 3))
        jac.append(ji)
        if m == 0:
            continue

        d = nl.vectors[i]
        r = nl.distances[i]
        unit = d / r[:, None]
        fc, dfc = _cutoff_fn(r, rc)
        w = Z_FEATURE_SCALE * s.species[nbr] if p.element_resolved else np.ones(m)

        if n_rad:
            diff = r[None, :] - rad_rs[:, None]
            gauss = np.exp(-rad_eta[:, None] * diff**2)
            pair_val = w[None, :] * gauss * fc[None, :]
            values[i, :n_rad] = pair_val.sum(axis=1)
            dpair = w[None, :] * gauss * (-2.0 * rad_eta[:, None] * diff * fc[None, :] + dfc[None, :])
            grad = dpair[:, :, None] * unit[None, :, :]
            ji[:n_rad, 1:] = grad
            ji[:n_rad, 0] = -grad.sum(axis=1)

        if p.angular and m >= 2:
            ia, ib = np.triu_indices(m, k=1)
            u, v = d[ia], d[ib]
            ra, rb = r[ia], r[ib]
            wvec = v - u
            rab = np.linalg.norm(wvec, axis=1)
            rab_safe = np.maximum(rab, 1e-12)
            uhat, vhat = unit[ia], unit[ib]
            what = wvec / rab_safe[:, None]
            fa, dfa = fc[ia], dfc[ia]
            fb, dfb = fc[ib], dfc[ib]
            fab, dfab = _cutoff_fn(rab, rc)
            cos = np.clip(np.einsum("pj,pj->p", u, v) / (ra * rb), -1.0, 1.0)
            wpair = w[ia] * w[ib]
            r2sum = ra**2 + rb**2 + rab**2

            for k, (eta, zeta, lam) in enumerate(p.angular):
                ks = n_rad + k
                base = np.maximum(1.0 + lam * cos, 0.0)
                pw = base**zeta
                pwm1 = base ** (zeta - 1.0)
                gauss = np.exp(-eta * r2sum)
                efull = gauss * fa * fb * fab
                pref = 2.0 ** (1.0 - zeta) * wpair
                values[i, ks] = np.sum(pref * pw * efull)

                dc_du = vhat / ra[:, None] - (cos / ra)[:, None] * uhat
                dc_dv = uhat / rb[:, None] - (cos / rb)[:, None] * vhat
                de_du = (
                    efull[:, None] * (-2.0 * eta) * (u - wvec)
                    + (gauss * fb)[:, None] * ((dfa * fab)[:, None] * uhat - (fa * dfab)[:, None] * what)
                )
                de_dv = (
                    efull[:, None] * (-2.0 * eta) * (v + wvec)
                    + (gauss * fa)[:, None] * ((dfb * fab)[:, None] * vhat + (fb * dfab)[:, None] * what)
                )
                ang = (zeta * lam) * pwm1 * efull
                t_u = pref[:, None] * (ang[:, None] * dc_du + pw[:, None] * de_du)
                t_v = pref[:, None] * (ang[:, None] * dc_dv + pw[:, None] * de_dv)

                np.add.at(ji[ks], ia + 1, t_u)
                np.add.at(ji[ks], ib + 1, t_v)
                ji[ks, 0] -= t_u.sum(axis=0) + t_v.sum(axis=0)

    return DescriptorSet(values=values, jac_atoms=jac_atoms, jac=jac,
                         bond_vectors=bond_vectors, params=p)
