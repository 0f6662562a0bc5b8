"""Fitting the potential to reference energies, forces, and charges.

The loss is a weighted sum of mean-square errors,

    L = w_e MSE(E_pred/N, E_ref/N) + w_f MSE(F_pred, F_ref) + w_q MSE(Q_pred, Q_ref)

with per-atom energy normalization so differently sized frames weigh
equally.  Gradients are fully analytic: plain backpropagation for the
energy term, the mixed second-order network pass for the force term
(force residuals become input-space tangents contracted with the
fingerprint Jacobians), and one adjoint KKT solve per frame for every
path that runs through the equilibrated charges.

When electrostatics is active, training runs in two phases: the
electronegativity head is first regressed on the reference charges,
then a joint phase fits the remaining energy (reference minus
electrostatic part) and forces.  In the joint phase the force-term
gradient treats the equilibrated charges of a frame as fixed; the
energy and charge terms keep their exact charge-response gradients.

Optimization is deterministic full-batch descent with multiplicative
step backoff: an epoch whose full training loss increased is rolled
back and the step size halves, which makes the accepted loss sequence
non-increasing by construction.  The default parameter update is Adam
(diagonal moment rescaling); plain momentum descent is available via
``optimizer="momentum"`` but converges far more slowly on the bundled
synthetic dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .calculators import LennardJonesCalculator
from .descriptors import DescriptorSet, compute_acsf
from .electrostatics import QeqSystem, coulomb_kernel, electrostatic_energy, equilibrate_charges, solve_kkt
from .neighbors import build_neighbor_list
from .potential import PotentialModel, _contract_jacobian, electrostatic_forces, predict
from .structure import Structure
from .xyz import Frame, parse_frames, write_frames


@dataclass
class Sample:
    """One labeled frame: structure plus reference data."""

    structure: Structure
    energy: float
    forces: np.ndarray | None = None
    charges: np.ndarray | None = None

    def __post_init__(self):
        n = self.structure.n_atoms
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=float)
            if self.forces.shape != (n, 3):
                raise ValueError("forces must be (N, 3)")
            if not np.all(np.isfinite(self.forces)):
                raise ValueError("non-finite reference forces")
        if self.charges is not None:
            self.charges = np.asarray(self.charges, dtype=float).reshape(n)
        if not np.isfinite(self.energy):
            raise ValueError("non-finite reference energy")


@dataclass
class TrainConfig:
    w_e: float = 1.0
    w_f: float = 0.0
    w_q: float = 0.0
    lr: float = 0.02
    epochs: int = 500
    batch_size: int | None = None
    val_fraction: float = 0.0
    seed: int = 0
    optimizer: str = "adam"
    momentum: float = 0.9
    backoff: float = 0.5
    growth: float = 1.05  # step recovery per accepted epoch, capped at lr
    charge_epochs: int | None = None
    tol_e: float | None = None  # meV/atom early-stop target
    tol_f: float | None = None  # meV/A early-stop target

    def __post_init__(self):
        if min(self.w_e, self.w_f, self.w_q) < 0 or self.w_e + self.w_f + self.w_q == 0:
            raise ValueError("loss weights must be >= 0 and not all zero")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("validation fraction must be in [0, 1)")
        if self.optimizer not in ("adam", "momentum"):
            raise ValueError("optimizer must be 'adam' or 'momentum'")


def load_dataset(path) -> list[Sample]:
    """Samples from a multi-frame extended-XYZ file, in file order."""
    with open(path) as fh:
        frames = parse_frames(fh.read())
    samples = []
    for k, f in enumerate(frames):
        if f.energy is None:
            raise ValueError(f"frame {k} has no energy label")
        samples.append(Sample(f.structure, f.energy, f.forces, f.charges))
    return samples


def save_dataset(path, samples: list[Sample]) -> None:
    frames = [Frame(s.structure, energy=s.energy, forces=s.forces, charges=s.charges)
              for s in samples]
    with open(path, "w") as fh:
        fh.write(write_frames(frames))


def make_lj_dataset(n_frames: int = 30, n_atoms: int = 8, seed: int = 2024,
                    calculator: LennardJonesCalculator | None = None) -> list[Sample]:
    """Synthetic pair-potential dataset; the analytic oracle makes the labels."""
    lj = calculator or LennardJonesCalculator()
    rng = np.random.default_rng(seed)
    lo = 0.92 * lj.r_min
    samples = []
    while len(samples) < n_frames:
        pos = [rng.uniform(-3.4, 3.4, 3)]
        tries = 0
        while len(pos) < n_atoms and tries < 4000:
            trial = rng.uniform(-3.4, 3.4, 3)
            tries += 1
            d = np.array([np.linalg.norm(trial - q) for q in pos])
            if d.min() > lo:
                pos.append(trial)
        if len(pos) < n_atoms:
            continue
        s = Structure(cell=np.zeros((3, 3)), periodic=[False] * 3,
                      positions=np.array(pos), species=[18] * n_atoms)
        e, f = lj.energy_and_forces(s)
        samples.append(Sample(s, e, f))
    return samples


# --- cached per-frame state ----------------------------------------------


@dataclass
class _Prepared:
    sample: Sample
    d: DescriptorSet
    x: np.ndarray
    kernel: np.ndarray | None
    alpha: np.ndarray | None


def prepare(m: PotentialModel, samples: list[Sample]) -> list[_Prepared]:
    """Precompute everything that does not depend on the weights."""
    out = []
    for t in samples:
        s = t.structure
        nl = build_neighbor_list(s, m.acsf.cutoff)
        d = compute_acsf(s, nl, m.acsf)
        kernel = alpha = None
        if m.use_electrostatics:
            alpha = m.alpha_for(s.species)
            hard = m.hardness_for(s.species)
            cutoff = m.elec_cutoff if s.periodic.any() else None
            kernel = coulomb_kernel(s, alpha, hard, cutoff)
        out.append(_Prepared(t, d, m.standardize(d.values), kernel, alpha))
    return out


@dataclass
class LossResult:
    value: float
    grads_energy: list[np.ndarray]
    grads_chi: list[np.ndarray]
    sse_e: float = 0.0  # per-atom energy residuals, squared and summed
    sse_f: float = 0.0
    sse_q: float = 0.0
    n_e: int = 0
    n_f: int = 0
    n_q: int = 0


def _force_tangent(d: DescriptorSet, resid_cot: np.ndarray, scale: np.ndarray,
                   width: int) -> np.ndarray:
    n_sym = d.params.n_sym
    u = np.zeros((len(resid_cot), width))
    for i in range(len(resid_cot)):
        sub = resid_cot[d.jac_atoms[i]]
        u[i, :n_sym] = -np.einsum("mp,kmp->k", sub, d.jac[i]) / scale[:n_sym]
    return u


def loss(m: PotentialModel, batch: list[Sample] | list[_Prepared], cfg: TrainConfig,
         *, trainable: str = "all") -> LossResult:
    """Loss value and analytic weight gradients over a batch.

    ``trainable`` restricts which gradients are assembled ("all",
    "energy", or "chi").  Counts for each active term are batch-wide so
    the value is a true weighted mean.
    """
    prepared = [p if isinstance(p, _Prepared) else prepare(m, [p])[0] for p in batch]

    n_e = sum(1 for p in prepared if cfg.w_e > 0)
    n_f = sum(3 * p.sample.structure.n_atoms for p in prepared
              if cfg.w_f > 0 and p.sample.forces is not None)
    n_q = sum(p.sample.structure.n_atoms for p in prepared
              if cfg.w_q > 0 and p.sample.charges is not None)
    if n_e + n_f + n_q == 0:
        raise ValueError("no active loss terms for this batch")

    grads_e = [np.zeros_like(w) for w in m.energy_net.parameters()]
    grads_c = [np.zeros_like(w) for w in m.chi_net.parameters()]
    res = LossResult(0.0, grads_e, grads_c, n_e=n_e, n_f=n_f, n_q=n_q)

    for p in prepared:
        _accumulate_frame(m, p, cfg, res, trainable)

    value = 0.0
    if n_e:
        value += cfg.w_e * res.sse_e / n_e
    if n_f:
        value += cfg.w_f * res.sse_f / n_f
    if n_q:
        value += cfg.w_q * res.sse_q / n_q
    res.value = value
    return res


def _accumulate_frame(m, p, cfg, res, trainable):
    s = p.sample.structure
    n = s.n_atoms
    x = p.x
    n_feat = m.acsf.n_features

    q = np.zeros(n)
    chi = lam_cot = None
    e_elec = 0.0
    if m.use_electrostatics:
        chi = m.chi_net.forward(x)
        sol = equilibrate_charges(QeqSystem(chi, np.diag(p.kernel), p.alpha,
                                            p.kernel, s.total_charge))
        q = sol.charges
        e_elec = electrostatic_energy(q, p.kernel, chi)

    inputs = m.energy_inputs(x, q if m.use_charge_input else None)
    want_forces = cfg.w_f > 0 and p.sample.forces is not None
    want_energy = cfg.w_e > 0

    if want_forces:
        atom_e, din = m.energy_net.input_gradient(inputs)
        coeff = (din[:, :n_feat] / m.feature_scale)[:, : m.acsf.n_sym]
        dedr, _, _ = _contract_jacobian(p.d, coeff, n)
        f_pred = -dedr
        if m.use_electrostatics:
            f_pred = f_pred + electrostatic_forces(s, p.d, m, sol)
    else:
        atom_e = m.energy_net.forward(inputs)

    e_pred = float(np.sum(np.sort(atom_e))) + e_elec

    cot_e = None
    g_q_needed = m.use_electrostatics and m.use_charge_input and want_energy
    alpha_e = 0.0
    if want_energy:
        de = (e_pred - p.sample.energy) / n
        res.sse_e += de * de
        alpha_e = 2.0 * cfg.w_e * de / n / res.n_e
        cot_e = np.full(n, alpha_e)

    tangent = None
    if want_forces:
        df = f_pred - p.sample.forces
        res.sse_f += float(np.sum(df * df))
        resid_cot = 2.0 * cfg.w_f * df / res.n_f
        tangent = _force_tangent(p.d, resid_cot, m.feature_scale, inputs.shape[1])

    if trainable in ("all", "energy") and (cot_e is not None or tangent is not None):
        _, g = m.energy_net.param_gradient(inputs, cot_value=cot_e, input_tangent=tangent)
        for acc, term in zip(res.grads_energy, g):
            acc += term

    # charge-path cotangents for the chi network
    if m.use_electrostatics and trainable in ("all", "chi"):
        cot_chi = np.zeros(n)
        rhs = np.zeros(n)
        if g_q_needed:
            if not want_forces:
                _, din = m.energy_net.input_gradient(inputs)
            rhs += alpha_e * din[:, n_feat]
            cot_chi += alpha_e * q
        elif want_energy:
            cot_chi += alpha_e * q
        if cfg.w_q > 0 and p.sample.charges is not None:
            dq = q - p.sample.charges
            res.sse_q += float(np.sum(dq * dq))
            rhs += 2.0 * cfg.w_q * dq / res.n_q
        if np.any(rhs):
            cot_chi -= solve_kkt(p.kernel, rhs, 0.0)[:-1]
        if np.any(cot_chi):
            _, g = m.chi_net.param_gradient(x, cot_value=cot_chi)
            for acc, term in zip(res.grads_chi, g):
                acc += term
    elif cfg.w_q > 0 and p.sample.charges is not None and m.use_electrostatics:
        dq = q - p.sample.charges
        res.sse_q += float(np.sum(dq * dq))


# --- optimizer --------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    rmse_e_train: float | None
    rmse_e_val: float | None
    rmse_f_train: float | None
    rmse_f_val: float | None
    rmse_q_train: float | None
    rmse_q_val: float | None
    loss: float
    lr: float


def _rmse_fields(m, prepared, cfg):
    """(energy meV/atom, force meV/A, charge me) over a prepared split."""
    if not prepared:
        return None, None, None
    probe = replace(cfg, w_e=1.0, w_f=1.0 if cfg.w_f > 0 else 0.0,
                    w_q=1.0 if cfg.w_q > 0 else 0.0)
    try:
        r = loss(m, prepared, probe, trainable="none")
    except ValueError:
        return None, None, None
    rmse_e = 1000.0 * np.sqrt(r.sse_e / r.n_e) if r.n_e else None
    rmse_f = 1000.0 * np.sqrt(r.sse_f / r.n_f) if r.n_f else None
    rmse_q = 1000.0 * np.sqrt(r.sse_q / r.n_q) if r.n_q else None
    return rmse_e, rmse_f, rmse_q


def _params(m: PotentialModel, which: str) -> list[np.ndarray]:
    if which == "energy":
        return m.energy_net.parameters()
    if which == "chi":
        return m.chi_net.parameters()
    return m.energy_net.parameters() + m.chi_net.parameters()


class _Stepper:
    """Deterministic parameter update: Adam or heavy-ball momentum."""

    def __init__(self, params, cfg):
        self.cfg = cfg
        self.m = [np.zeros_like(w) for w in params]
        self.v = [np.zeros_like(w) for w in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        if self.cfg.optimizer == "adam":
            b1, b2, eps = 0.9, 0.999, 1e-8
            for w, mo, ve, g in zip(params, self.m, self.v, grads):
                mo *= b1
                mo += (1 - b1) * g
                ve *= b2
                ve += (1 - b2) * g * g
                w -= lr * (mo / (1 - b1**self.t)) / (np.sqrt(ve / (1 - b2**self.t)) + eps)
        else:
            for w, mo, g in zip(params, self.m, grads):
                mo *= self.cfg.momentum
                mo -= lr * g
                w += mo


def _descent(m, prepared, cfg, which, epochs, history, start_epoch, val_prepared):
    params = _params(m, which)
    stepper = _Stepper(params, cfg)
    lr = cfg.lr
    last = None
    snapshot = None

    for e in range(epochs):
        if cfg.batch_size:
            batches = [prepared[k : k + cfg.batch_size]
                       for k in range(0, len(prepared), cfg.batch_size)]
        else:
            batches = [prepared]

        full = loss(m, prepared, cfg, trainable=which)
        if not np.isfinite(full.value):
            if snapshot is not None:
                for w, keep in zip(params, snapshot):
                    w[:] = keep
            break
        if last is not None and full.value > last * (1.0 + 1e-10):
            # roll back and shrink the step; increases below float noise
            # are accepted, so the loss sequence is monotone to 1e-10 rel.
            for w, keep in zip(params, snapshot):
                w[:] = keep
            lr *= cfg.backoff
            full = loss(m, prepared, cfg, trainable=which)
        else:
            lr = min(lr * cfg.growth, cfg.lr)

        snapshot = [w.copy() for w in params]
        last = full.value

        rmse_e, rmse_f, rmse_q = _split_rmse(full)
        vr = _rmse_fields(m, val_prepared, cfg) if val_prepared else (None, None, None)
        history.append(EpochRecord(start_epoch + e, rmse_e, vr[0], rmse_f, vr[1],
                                   rmse_q, vr[2], full.value, lr))
        if _targets_met(cfg, rmse_e, rmse_f):
            break

        for batch in batches:
            r = full if len(batches) == 1 else loss(m, batch, cfg, trainable=which)
            grads = (r.grads_energy if which == "energy"
                     else r.grads_chi if which == "chi"
                     else r.grads_energy + r.grads_chi)
            stepper.step(params, grads, lr)
    return start_epoch + epochs


def _split_rmse(r: LossResult):
    rmse_e = 1000.0 * np.sqrt(r.sse_e / r.n_e) if r.n_e else None
    rmse_f = 1000.0 * np.sqrt(r.sse_f / r.n_f) if r.n_f else None
    rmse_q = 1000.0 * np.sqrt(r.sse_q / r.n_q) if r.n_q else None
    return rmse_e, rmse_f, rmse_q


def _targets_met(cfg, rmse_e, rmse_f):
    if cfg.tol_e is None and cfg.tol_f is None:
        return False
    if cfg.tol_e is not None and (rmse_e is None or rmse_e > cfg.tol_e):
        return False
    if cfg.tol_f is not None and (rmse_f is None or rmse_f > cfg.tol_f):
        return False
    return True


def train(m: PotentialModel, dataset: list[Sample], cfg: TrainConfig):
    """Fit the model in place; returns (model, history).

    Runs the charge phase first when electrostatics is on and charge
    labels exist, then the joint phase.  Fixed seeds make reruns
    bitwise identical.
    """
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(dataset))
    n_val = int(round(cfg.val_fraction * len(dataset)))
    val = [dataset[i] for i in order[:n_val]]
    tr = [dataset[i] for i in order[n_val:]]
    if not tr:
        raise ValueError("empty training split")

    _init_standardization(m, tr)
    prepared = prepare(m, tr)
    val_prepared = prepare(m, val) if val else []

    history: list[EpochRecord] = []
    epoch = 0
    has_charges = any(t.charges is not None for t in tr)
    if m.use_electrostatics and cfg.w_q > 0 and has_charges:
        phase1 = replace(cfg, w_e=0.0, w_f=0.0)
        epoch = _descent(m, prepared, phase1, "chi",
                         cfg.charge_epochs or cfg.epochs, history, epoch, val_prepared)

    _init_energy_bias(m, prepared, tr)
    _descent(m, prepared, cfg, "all" if m.use_electrostatics else "energy",
             cfg.epochs, history, epoch, val_prepared)
    return m, history


def _init_standardization(m: PotentialModel, samples: list[Sample]) -> None:
    d_all = []
    for t in samples:
        nl = build_neighbor_list(t.structure, m.acsf.cutoff)
        d_all.append(compute_acsf(t.structure, nl, m.acsf).values)
    g = np.vstack(d_all)
    m.feature_mean = g.mean(axis=0)
    scale = g.std(axis=0)
    m.feature_scale = np.where(scale > 1e-8, scale, 1.0)


def _init_energy_bias(m: PotentialModel, prepared, samples: list[Sample]) -> None:
    """Start the energy head at the mean per-atom target."""
    targets = []
    for p, t in zip(prepared, samples):
        e_ref = t.energy
        if m.use_electrostatics:
            chi = m.chi_net.forward(p.x)
            sol = equilibrate_charges(QeqSystem(chi, np.diag(p.kernel), p.alpha,
                                                p.kernel, t.structure.total_charge))
            e_ref -= electrostatic_energy(sol.charges, p.kernel, chi)
        targets.append(e_ref / t.structure.n_atoms)
    m.energy_net.biases[-1][:] = np.mean(targets)


# --- evaluation --------------------------------------------------------------


@dataclass
class ParityRow:
    frame: int
    n_atoms: int
    e_ref: float
    e_pred: float
    f_sse: float | None
    f_count: int
    q_sse: float | None
    q_count: int


def evaluate(m: PotentialModel, dataset: list[Sample]):
    """Metrics record and a per-frame parity table.

    Missing labels leave their metrics absent (None), never zero.
    """
    rows = []
    for k, t in enumerate(dataset):
        p = predict(t.structure, m)
        f_sse = q_sse = None
        f_count = q_count = 0
        if t.forces is not None:
            df = p.forces - t.forces
            f_sse = float(np.sum(df * df))
            f_count = df.size
        if t.charges is not None:
            dq = p.charges - t.charges
            q_sse = float(np.sum(dq * dq))
            q_count = dq.size
        rows.append(ParityRow(k, t.structure.n_atoms, t.energy, p.e_total,
                              f_sse, f_count, q_sse, q_count))

    de = np.array([(r.e_pred - r.e_ref) / r.n_atoms for r in rows])
    metrics = {
        "rmse_e_mev_atom": 1000.0 * float(np.sqrt(np.mean(de**2))),
        "mae_e_mev_atom": 1000.0 * float(np.mean(np.abs(de))),
        "rmse_f_mev_a": None,
        "rmse_q_me": None,
    }
    f_total = sum(r.f_count for r in rows)
    if f_total:
        metrics["rmse_f_mev_a"] = 1000.0 * float(
            np.sqrt(sum(r.f_sse for r in rows if r.f_sse is not None) / f_total))
    q_total = sum(r.q_count for r in rows)
    if q_total:
        metrics["rmse_q_me"] = 1000.0 * float(
            np.sqrt(sum(r.q_sse for r in rows if r.q_sse is not None) / q_total))
    return metrics, rows


def parity_csv(rows: list[ParityRow]) -> str:
    header = "frame,n_atoms,e_ref_ev,e_pred_ev,f_sse_ev2_a2,f_count,q_sse_e2,q_count"
    lines = [header]
    for r in rows:
        lines.append(",".join([
            str(r.frame), str(r.n_atoms), f"{r.e_ref:.17g}", f"{r.e_pred:.17g}",
            "" if r.f_sse is None else f"{r.f_sse:.17g}", str(r.f_count),
            "" if r.q_sse is None else f"{r.q_sse:.17g}", str(r.q_count),
        ]))
    return "\n".join(lines) + "\n"


def history_csv(history: list[EpochRecord]) -> str:
    header = ("epoch,rmse_e_train,rmse_e_val,rmse_f_train,rmse_f_val,"
              "rmse_q_train,rmse_q_val")
    fmt = lambda v: "" if v is None else f"{v:.17g}"
    lines = [header]
    for r in history:
        lines.append(",".join([str(r.epoch), fmt(r.rmse_e_train), fmt(r.rmse_e_val),
                               fmt(r.rmse_f_train), fmt(r.rmse_f_val),
                               fmt(r.rmse_q_train), fmt(r.rmse_q_val)]))
    return "\n".join(lines) + "\n"
