"""End-to-end acceptance checks behind the ``selftest`` subcommand.

Each criterion is one function returning (passed, detail).  The checks
pin every tolerance explicitly; ``run_all`` prints one line per
criterion and reports overall success.  The pytest suite binds the same
functions, so the CLI and the test suite cannot drift apart.
"""

from __future__ import annotations

import time

import numpy as np

from .calculators import LennardJonesCalculator
from .chemomech import (
    EnergyTriple,
    SlidingProfile,
    VoigtTensor,
    diffusion_kinetics,
    elastic_constants,
    intercalation_voltage,
    interphase_formation_energy,
    sei_formation_energy,
    sliding_traction,
    voigt_moduli,
    work_of_separation,
)
from .cyclesim import CycleConfig, region_stress, run_cycle, trace_csv
from .descriptors import AcsfParams, compute_acsf
from .electrostatics import (
    QeqSystem,
    coulomb_kernel,
    electrostatic_energy,
    equilibrate_charges,
    frozen_charge_forces,
)
from .neighbors import build_neighbor_list
from .potential import PotentialModel, kinetic_stress, predict, short_range_forces
from .structure import Region, Structure, apply_strain, replicate
from .training import TrainConfig, evaluate, loss, make_lj_dataset, train
from .xyz import parse_structure, write_frame

_ACSF = AcsfParams(
    cutoff=4.0,
    radial=((0.3, 0.0), (0.9, 1.6), (1.8, 2.6)),
    angular=((0.02, 1.0, 1.0), (0.03, 2.0, -1.0), (0.08, 4.0, 1.0)),
)

_LJ_ACSF = AcsfParams(
    cutoff=6.0,
    radial=tuple(zip((16.0, 16.0, 8.0, 8.0, 4.0, 4.0, 2.0, 2.0, 1.0, 1.0),
                     (2.0, 2.3, 2.6, 2.9, 3.2, 3.6, 4.0, 4.5, 5.0, 5.5)))
    + ((0.05, 0.0), (0.3, 0.0)),
    angular=((0.01, 1.0, 1.0), (0.01, 2.0, -1.0)),
)


def _cluster(rng, n=8, spread=3.0, min_dist=1.4, species=None):
    pos = [rng.uniform(-spread, spread, 3)]
    while len(pos) < n:
        trial = rng.uniform(-spread, spread, 3)
        if min(np.linalg.norm(trial - q) for q in pos) > min_dist:
            pos.append(trial)
    if species is None:
        species = rng.choice([1, 3, 6, 8, 14], size=n)
    return Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                     positions=np.array(pos), species=species)


def _periodic(rng, n=8, a=9.0, min_dist=1.4):
    pos = [rng.uniform(0, a, 3)]
    while len(pos) < n:
        trial = rng.uniform(0, a, 3)
        ok = True
        for q in pos:
            d = trial - q
            d -= a * np.round(d / a)
            if np.linalg.norm(d) <= min_dist:
                ok = False
                break
        if ok:
            pos.append(trial)
    return Structure(cell=a * np.eye(3), periodic=[True] * 3,
                     positions=np.array(pos), species=rng.choice([3, 6, 14], size=n))


def _model(seed=0, acsf=_ACSF, **kw):
    return PotentialModel.create(acsf=acsf, hidden=(10, 8), seed=seed, **kw)


def _descriptors(s, p):
    return compute_acsf(s, build_neighbor_list(s, p.cutoff), p)


def criterion_1_descriptor_jacobians():
    """Fingerprint Jacobians vs central finite differences, 20 clusters."""
    t0 = time.time()
    h = 1e-5
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        s = _cluster(rng)
        d = _descriptors(s, _ACSF)
        n, n_sym = s.n_atoms, _ACSF.n_sym
        dense = np.zeros((n, n_sym, n, 3))
        for i in range(n):
            for m, b in enumerate(d.jac_atoms[i]):
                dense[i, :, b, :] += d.jac[i][:, m, :]
        for b in range(n):
            for c in range(3):
                pos = s.positions.copy()
                pos[b, c] += h
                vp = _descriptors(s.with_positions(pos), _ACSF).values[:, :n_sym]
                pos[b, c] -= 2 * h
                vm = _descriptors(s.with_positions(pos), _ACSF).values[:, :n_sym]
                worst = max(worst, float(np.max(np.abs(dense[:, :, b, c] - (vp - vm) / (2 * h)))))
    elapsed = time.time() - t0
    ok = worst < 1e-7 and elapsed < 10.0
    return ok, f"max |analytic - FD| = {worst:.2e} 1/A (tol 1e-7), {elapsed:.1f} s (limit 10 s)"


def _fd_forces_full(s, m, h=1e-4):
    n = s.n_atoms
    out = np.zeros((n, 3))
    for b in range(n):
        for c in range(3):
            pos = s.positions.copy()
            pos[b, c] += h
            ep = predict(s.with_positions(pos), m).e_total
            pos[b, c] -= 2 * h
            em = predict(s.with_positions(pos), m).e_total
            out[b, c] = -(ep - em) / (2 * h)
    return out


def criterion_2_forces():
    """Analytic forces vs finite differences of the total energy."""
    worst_frozen = 0.0
    for seed in range(5):
        rng = np.random.default_rng(2000 + seed)
        m = _model(seed=seed, use_electrostatics=True)
        s = _cluster(rng, n=6)
        d = _descriptors(s, m.acsf)
        alpha = m.alpha_for(s.species)
        hard = m.hardness_for(s.species)
        chi0 = m.chi_net.forward(m.standardize(d.values))
        kernel0 = coulomb_kernel(s, alpha, hard)
        q0 = equilibrate_charges(QeqSystem(chi0, hard, alpha, kernel0, 0.0)).charges

        def frozen_energy(pos):
            s2 = s.with_positions(pos)
            d2 = _descriptors(s2, m.acsf)
            x2 = m.standardize(d2.values)
            e_short = float(np.sum(np.sort(m.energy_net.forward(m.energy_inputs(x2, q0)))))
            k2 = coulomb_kernel(s2, alpha, hard)
            return e_short + electrostatic_energy(q0, k2, chi0)

        analytic = short_range_forces(s, d, m, charges=q0) + frozen_charge_forces(s, q0, alpha)
        h = 1e-4
        for b in range(s.n_atoms):
            for c in range(3):
                pos = s.positions.copy()
                pos[b, c] += h
                ep = frozen_energy(pos)
                pos[b, c] -= 2 * h
                em = frozen_energy(pos)
                worst_frozen = max(worst_frozen, abs(analytic[b, c] + (ep - em) / (2 * h)))

    worst_qeq = 0.0
    for seed in range(5):
        rng = np.random.default_rng(2500 + seed)
        m = _model(seed=10 + seed, use_electrostatics=True, use_charge_input=bool(seed % 2))
        s = _cluster(rng, n=6)
        got = predict(s, m).forces
        worst_qeq = max(worst_qeq, float(np.max(np.abs(got - _fd_forces_full(s, m)))))

    ok = worst_frozen < 1e-6 and worst_qeq < 1e-5
    return ok, (f"frozen-charge max err = {worst_frozen:.2e} eV/A (tol 1e-6); "
                f"Qeq re-equilibrated max err = {worst_qeq:.2e} eV/A (tol 1e-5)")


def criterion_3_static_stress():
    """Static stress vs strain finite differences on periodic cells."""
    worst = 0.0
    asym = 0.0
    for seed in range(3):
        rng = np.random.default_rng(3000 + seed)
        m = _model(seed=seed)
        s = _periodic(rng)
        sig = predict(s, m).stress_static
        asym = max(asym, float(np.max(np.abs(sig - sig.T))))
        v = s.volume
        h = 1e-6
        for p in range(3):
            for q in range(p, 3):
                eps = np.zeros((3, 3))
                eps[p, q] = eps[q, p] = h
                ep = predict(apply_strain(s, eps), m).e_total
                em = predict(apply_strain(s, -eps), m).e_total
                fd = (ep - em) / (2 * h) / v
                fd = fd if p == q else fd / 2.0
                worst = max(worst, abs(sig[p, q] - fd))
    ok = worst < 1e-6 and asym < 1e-8
    return ok, (f"max |stress - FD| = {worst:.2e} eV/A^3 (tol 1e-6); "
                f"asymmetry = {asym:.2e} (tol 1e-8)")


def criterion_4_kinetic_stress():
    """Unit-conversion oracle: m = 1 amu, v = (1,0,0) A/fs, V = 100 A^3."""
    s = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                  positions=[[0, 0, 0]], species=[1], masses=[1.0],
                  velocities=[[1.0, 0.0, 0.0]])
    sig = kinetic_stress(s, volume=100.0)
    err = abs(sig[0, 0] - 1.03642691)
    rest = float(np.max(np.abs(sig - np.diag([sig[0, 0], 0, 0]))))
    ok = err < 1e-8 and rest == 0.0
    return ok, f"sigma_xx = {sig[0, 0]:.8f} eV/A^3, err = {err:.2e} (tol 1e-8)"


def criterion_5_invariances():
    """Permutation exact; rotation/translation < 1e-9 eV; 2x2x2 extensivity."""
    rng = np.random.default_rng(500)
    m = _model(seed=5)
    s = _cluster(rng, n=7, species=[6] * 7)
    e0 = predict(s, m).e_total
    perm = rng.permutation(7)
    e1 = predict(s.with_positions(s.positions[perm]), m).e_total
    perm_exact = e1 == e0

    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    moved = s.with_positions(s.positions @ q.T + np.array([5.0, -2.0, 1.0]))
    drift = abs(predict(moved, m).e_total - e0)

    sp = _periodic(rng, n=6, a=2.2 * _ACSF.cutoff)
    e_one = predict(sp, m).e_short
    e_eight = predict(replicate(sp, 2, 2, 2), m).e_short
    ext_rel = abs(e_eight - 8.0 * e_one) / abs(8.0 * e_one)

    ok = perm_exact and drift < 1e-9 and ext_rel < 1e-9
    return ok, (f"permutation exact: {perm_exact}; rigid-motion drift = {drift:.2e} eV "
                f"(tol 1e-9); extensivity rel err = {ext_rel:.2e} (tol 1e-9)")


def criterion_6_charge_equilibration():
    """Charge conservation, two-atom closed form, long-range sensitivity."""
    rng = np.random.default_rng(60)
    worst_sum = 0.0
    for _ in range(5):
        n = int(rng.integers(2, 10))
        pos = np.cumsum(rng.uniform(1.8, 2.6, (n, 3)), axis=0)
        s = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                      positions=pos, species=[3] * n)
        alpha = rng.uniform(0.6, 1.4, n)
        hard = np.full(n, 10.0)
        kernel = coulomb_kernel(s, alpha, hard)
        q_tot = float(rng.normal())
        sol = equilibrate_charges(QeqSystem(rng.normal(size=n), hard, alpha, kernel, q_tot))
        worst_sum = max(worst_sum, abs(sol.charges.sum() - q_tot))

    two = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                    positions=[[0, 0, 0], [2.9, 0, 0]], species=[3, 8])
    alpha2 = np.array([0.9, 0.7])
    hard2 = np.array([9.0, 12.0])
    kernel2 = coulomb_kernel(two, alpha2, hard2)
    chi2 = np.array([0.3, -0.6])
    sol2 = equilibrate_charges(QeqSystem(chi2, hard2, alpha2, kernel2, 0.0))
    closed = (chi2[1] - chi2[0]) / (kernel2[0, 0] + kernel2[1, 1] - 2 * kernel2[0, 1])
    err2 = abs(sol2.charges[0] - closed)

    pos = np.zeros((10, 3))
    pos[:, 0] = 2.0 * np.arange(10)
    chain = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                      positions=pos, species=[3] * 10)
    alpha_c = np.full(10, 1.0)
    hard_c = np.full(10, 10.0)
    kernel_c = coulomb_kernel(chain, alpha_c, hard_c)
    base = equilibrate_charges(QeqSystem(np.zeros(10), hard_c, alpha_c, kernel_c, 0.0)).charges
    chi_p = np.zeros(10)
    chi_p[0] = 0.5
    shifted = equilibrate_charges(QeqSystem(chi_p, hard_c, alpha_c, kernel_c, 0.0)).charges
    sensitivity = abs(shifted[-1] - base[-1])

    ok = worst_sum < 1e-10 and err2 < 1e-10 and sensitivity > 1e-6
    return ok, (f"sum-Q err = {worst_sum:.2e} e (tol 1e-10); two-atom err = {err2:.2e} e "
                f"(tol 1e-10); far-end response = {sensitivity:.2e} e (need > 1e-6)")


def criterion_7_training():
    """Synthetic pair-potential fit plus loss-gradient finite differences."""
    t0 = time.time()
    data = make_lj_dataset(30, 8, seed=2024)
    m = PotentialModel.create(acsf=_LJ_ACSF, hidden=(24, 24), seed=7)
    cfg = TrainConfig(w_e=1.0, w_f=0.03, lr=0.02, epochs=2000, seed=7,
                      tol_e=0.8, tol_f=25.0)
    m, hist = train(m, data, cfg)
    elapsed = time.time() - t0
    metrics, _ = evaluate(m, data)
    rmse_e = metrics["rmse_e_mev_atom"]
    rmse_f = metrics["rmse_f_mev_a"]

    probe_m = _model(seed=71)
    rng = np.random.default_rng(71)
    batch = []
    from .training import Sample

    for _ in range(2):
        sb = _cluster(rng, n=5)
        batch.append(Sample(sb, float(rng.normal()), rng.normal(size=(5, 3))))
    probe_cfg = TrainConfig(w_e=1.0, w_f=0.5)
    res = loss(probe_m, batch, probe_cfg)
    params = probe_m.energy_net.parameters()
    flat = np.concatenate([g.ravel() for g in res.grads_energy])
    offsets = np.cumsum([0] + [p.size for p in params])
    worst_rel = 0.0
    h = 1e-6
    for probe in rng.choice(flat.size, size=10, replace=False):
        k = int(np.searchsorted(offsets, probe, side="right") - 1)
        local = probe - offsets[k]
        orig = params[k].ravel()[local]
        params[k].ravel()[local] = orig + h
        lp = loss(probe_m, batch, probe_cfg).value
        params[k].ravel()[local] = orig - h
        lm = loss(probe_m, batch, probe_cfg).value
        params[k].ravel()[local] = orig
        fd = (lp - lm) / (2 * h)
        if abs(fd) > 1e-12:
            worst_rel = max(worst_rel, abs(flat[probe] - fd) / abs(fd))

    ok = rmse_e < 1.0 and rmse_f < 30.0 and len(hist) <= 2000 and elapsed < 300 and worst_rel < 1e-4
    return ok, (f"energy RMSE = {rmse_e:.3f} meV/atom (tol 1), force RMSE = {rmse_f:.1f} meV/A "
                f"(tol 30), {len(hist)} epochs, {elapsed:.0f} s (limit 300); "
                f"grad FD rel err = {worst_rel:.2e} (tol 1e-4)")


def criterion_8_closed_form_analyzers():
    """Hand-evaluated analyzer cases, exact to 1e-12."""
    checks = []
    for lam, mu in ((1.0, 1.0), (3.5, 0.8)):
        mod = voigt_moduli(VoigtTensor.isotropic(lam, mu))
        checks.append(abs(mod.bulk - (lam + 2 * mu / 3)) < 1e-12)
        checks.append(abs(mod.shear - mu) < 1e-12)
    c = np.zeros((6, 6))
    c[:3, :3] = 50.0
    c[np.diag_indices(3)] = 100.0
    c[3:, 3:] = 30.0 * np.eye(3)
    mod = voigt_moduli(VoigtTensor(c))
    checks.append(abs(mod.bulk - 200.0 / 3.0) < 1e-3)   # 66.667 as printed
    checks.append(abs(mod.shear - 28.0) < 1e-12)
    checks.append(abs(intercalation_voltage(-3.0, 2) - 1.5) < 1e-12)
    kin = diffusion_kinetics(1e-5, 1e-12)
    checks.append(abs(kin["tau_s"] - 100.0) < 1e-10)
    checks.append(abs(kin["c_rate_per_h"] - 36.0) < 1e-12)
    w = work_of_separation(EnergyTriple(-10.0, -5.0, -16.0, 10.0))
    checks.append(abs(w["wsep_ev_a2"] - 0.1) < 1e-12)
    checks.append(abs(w["wsep_j_m2"] - 1.6021766) < 1e-12)
    checks.append(abs(interphase_formation_energy(-100.0, -98.0) - (-2.0)) < 1e-12)
    checks.append(abs(sei_formation_energy(-210.0, -10.0, -196.0, 4) - (-1.0)) < 1e-12)
    ok = all(checks)
    return ok, f"{sum(checks)}/{len(checks)} closed-form identities at stated tolerances"


def _lj_fcc():
    lj = LennardJonesCalculator(epsilon=0.35, sigma=2.3, cutoff=2.1 * 2.3)
    from scipy.optimize import minimize_scalar

    base = np.array([[0, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5]])

    def crystal(a):
        s = Structure(cell=a * np.eye(3), periodic=[True] * 3,
                      positions=base * a, species=[18] * 4)
        return replicate(s, 3, 3, 3)

    res = minimize_scalar(lambda a: lj.energy(crystal(a)) / 108,
                          bounds=(1.45 * lj.sigma, 1.75 * lj.sigma),
                          method="bounded", options={"xatol": 1e-10})
    return lj, crystal(res.x)


def criterion_9_elastic_constants():
    """Cauchy relation on the pair-potential FCC crystal; delta convergence."""
    lj, s = _lj_fcc()
    c1 = elastic_constants(s, lj, delta=1e-3).c
    cauchy = abs(c1[0, 1] - c1[3, 3]) / abs(c1[3, 3])
    c2 = elastic_constants(s, lj, delta=5e-4).c
    conv = float(np.max(np.abs(c1 - c2)) / np.max(np.abs(c1)))
    ok = cauchy < 0.02 and conv < 0.005
    return ok, (f"C12 = {c1[0, 1]:.2f} GPa, C44 = {c1[3, 3]:.2f} GPa, "
                f"Cauchy dev = {100 * cauchy:.2f}% (tol 2%); "
                f"delta-halving change = {100 * conv:.3f}% (tol 0.5%)")


def criterion_10_sliding_traction():
    """Sinusoidal profile: tau_max within 1% of 2 pi A / L at 64 samples."""
    big_l, amp = 6.0, 0.25
    grid = np.linspace(0.0, big_l, 64)
    w = 0.8 + amp * np.sin(2 * np.pi * grid / big_l + 0.3)
    _, tau = sliding_traction(SlidingProfile(grid, w))
    want = 2 * np.pi * amp / big_l
    rel = abs(tau - want) / want
    ok = rel < 0.01
    return ok, f"tau_max = {tau:.6f} J/m^2/A vs 2piA/L = {want:.6f}, rel err = {100 * rel:.2f}% (tol 1%)"


def criterion_11_cycling():
    """Seeded cycling: bitwise trace, census, region-stress additivity."""
    lj = LennardJonesCalculator(epsilon=0.3, sigma=2.2, cutoff=3.8)
    a0 = 2.6
    host = replicate(Structure(cell=a0 * np.eye(3), periodic=[True] * 3,
                               positions=[[0.5 * a0] * 3], species=[14]), 3, 3, 3)
    cfg = CycleConfig(intercalant_z=3, region=Region(axis=2, lo=0.0, hi=3.9),
                      atoms_per_step=2, bias=0.05, relax_tol=0.08,
                      relax_max_steps=150, x_max=2.0, seed=11)
    schedule = ["charge", "charge", "discharge"]
    t1 = run_cycle(host, lj, cfg, schedule)
    t2 = run_cycle(host, lj, cfg, schedule)
    bitwise = trace_csv(t1) == trace_csv(t2)
    census = all(int(np.sum(f.species == 14)) == 27 for f in t1.frames)

    final = t1.frames[-1]
    zmax = final.cell[2, 2]
    r1 = Region(axis=2, lo=0.0, hi=0.45 * zmax)
    r2 = Region(axis=2, lo=0.45 * zmax, hi=zmax)
    s1 = region_stress(final, lj, r1)
    s2 = region_stress(final, lj, r2)
    total = lj.atom_virials(final).sum(axis=0) / final.volume
    additive = float(np.max(np.abs(
        (r1.volume(final) * s1 + r2.volume(final) * s2) / final.volume - total)))
    whole = region_stress(final, lj, Region(axis=2, lo=-1.0, hi=zmax + 1.0))
    whole_err = float(np.max(np.abs(whole - total)))

    ok = bitwise and census and additive < 1e-10 and whole_err < 1e-10
    return ok, (f"bitwise reproducible: {bitwise}; host census conserved: {census}; "
                f"additivity err = {additive:.2e} eV/A^3 (tol 1e-10); "
                f"full-cell vs global err = {whole_err:.2e} (tol 1e-10)")


CRITERIA = [
    ("1 descriptor Jacobians", criterion_1_descriptor_jacobians),
    ("2 force correctness", criterion_2_forces),
    ("3 static stress", criterion_3_static_stress),
    ("4 kinetic stress", criterion_4_kinetic_stress),
    ("5 invariances", criterion_5_invariances),
    ("6 charge equilibration", criterion_6_charge_equilibration),
    ("7 training", criterion_7_training),
    ("8 closed-form analyzers", criterion_8_closed_form_analyzers),
    ("9 elastic constants", criterion_9_elastic_constants),
    ("10 sliding traction", criterion_10_sliding_traction),
    ("11 cycling protocol", criterion_11_cycling),
]


def run_all(stream=None) -> bool:
    """Run every criterion, print one line each; True iff all pass."""
    import sys

    stream = stream or sys.stdout
    t0 = time.time()
    all_ok = True
    for name, fn in CRITERIA:
        t = time.time()
        try:
            ok, detail = fn()
        except Exception as err:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(err).__name__}: {err}"
        all_ok &= ok
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] criterion {name}: {detail} ({time.time() - t:.1f} s)",
              file=stream)
    print(f"selftest {'passed' if all_ok else 'FAILED'} in {time.time() - t0:.1f} s",
          file=stream)
    return all_ok
