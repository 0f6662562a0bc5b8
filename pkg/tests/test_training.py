import numpy as np
import pytest

from conftest import TEST_ACSF, make_cluster, make_model
from mamforge.descriptors import AcsfParams
from mamforge.potential import PotentialModel, predict
from mamforge.training import (
    Sample,
    TrainConfig,
    evaluate,
    history_csv,
    load_dataset,
    loss,
    make_lj_dataset,
    parity_csv,
    save_dataset,
    train,
)


LJ_ACSF = AcsfParams(
    cutoff=6.0,
    radial=tuple(zip([16.0, 16.0, 8.0, 8.0, 4.0, 4.0, 2.0, 2.0, 1.0, 1.0],
                     [2.0, 2.3, 2.6, 2.9, 3.2, 3.6, 4.0, 4.5, 5.0, 5.5]))
    + ((0.05, 0.0), (0.3, 0.0)),
    angular=((0.01, 1.0, 1.0), (0.01, 2.0, -1.0)),
)


def labeled_batch(rng, m, n_frames=3, with_charges=False):
    batch = []
    for _ in range(n_frames):
        s = make_cluster(rng, n=5)
        charges = rng.normal(size=5) * 0.1 if with_charges else None
        if charges is not None:
            charges -= charges.mean()
        batch.append(Sample(s, float(rng.normal()), rng.normal(size=(5, 3)), charges))
    return batch


def grad_fd_check(m, batch, cfg, rng, n_probe=10, h=1e-6, rtol=1e-4):
    res = loss(m, batch, cfg)
    grads = res.grads_energy + res.grads_chi
    params = m.energy_net.parameters() + m.chi_net.parameters()
    flat_g = np.concatenate([g.ravel() for g in grads])
    probes = rng.choice(flat_g.size, size=n_probe, replace=False)
    offsets = np.cumsum([0] + [p.size for p in params])
    checked = 0
    for probe in probes:
        k = np.searchsorted(offsets, probe, side="right") - 1
        local = probe - offsets[k]
        p = params[k]
        orig = p.ravel()[local]
        p.ravel()[local] = orig + h
        lp = loss(m, batch, cfg).value
        p.ravel()[local] = orig - h
        lm = loss(m, batch, cfg).value
        p.ravel()[local] = orig
        fd = (lp - lm) / (2 * h)
        if abs(fd) < 1e-12 and abs(flat_g[probe]) < 1e-12:
            continue
        assert flat_g[probe] == pytest.approx(fd, rel=rtol, abs=1e-10)
        checked += 1
    return checked


# --- dataset io -----------------------------------------------------------

def test_load_dataset_roundtrip(tmp_path, rng):
    samples = labeled_batch(rng, None, n_frames=3, with_charges=True)
    path = tmp_path / "data.xyz"
    save_dataset(path, samples)
    back = load_dataset(path)
    assert len(back) == 3
    for a, b in zip(samples, back):
        assert b.energy == pytest.approx(a.energy, rel=5e-12)
        assert np.allclose(b.forces, a.forces, rtol=5e-12, atol=1e-15)
        assert np.allclose(b.charges, a.charges, rtol=5e-12, atol=1e-15)


def test_load_dataset_requires_energy(tmp_path):
    (tmp_path / "bad.xyz").write_text("1\nProperties=species:S:1:pos:R:3\nH 0 0 0\n")
    with pytest.raises(ValueError, match="energy"):
        load_dataset(tmp_path / "bad.xyz")


def test_missing_forces_skips_force_term(rng):
    m = make_model(seed=1)
    s = make_cluster(rng, n=4)
    batch = [Sample(s, -1.0)]  # no forces
    r = loss(m, batch, TrainConfig(w_e=1.0, w_f=1.0))
    assert r.n_f == 0 and r.sse_f == 0.0


# --- loss values -----------------------------------------------------------

def test_perfect_prediction_loss_zero(rng):
    m = make_model(seed=2)
    s = make_cluster(rng, n=4)
    p = predict(s, m)
    batch = [Sample(s, p.e_total, p.forces)]
    r = loss(m, batch, TrainConfig(w_e=1.0, w_f=1.0))
    assert r.value == pytest.approx(0.0, abs=1e-24)
    for g in r.grads_energy:
        assert np.max(np.abs(g)) < 1e-10


def test_weight_masking_reduces_to_energy_mse(rng):
    m = make_model(seed=3)
    batch = labeled_batch(rng, m)
    r = loss(m, batch, TrainConfig(w_e=1.0, w_f=0.0, w_q=0.0))
    want = np.mean([
        ((predict(b.structure, m).e_total - b.energy) / b.structure.n_atoms) ** 2
        for b in batch
    ])
    assert r.value == pytest.approx(want, rel=1e-12)


# --- loss gradients vs finite differences ----------------------------------

def test_gradients_energy_only(rng):
    m = make_model(seed=4)
    batch = labeled_batch(rng, m)
    assert grad_fd_check(m, batch, TrainConfig(w_e=1.0), rng) > 0


def test_gradients_energy_and_forces(rng):
    m = make_model(seed=5)
    batch = labeled_batch(rng, m)
    assert grad_fd_check(m, batch, TrainConfig(w_e=1.0, w_f=0.5), rng) > 0


def test_gradients_forces_only(rng):
    m = make_model(seed=6)
    batch = labeled_batch(rng, m)
    assert grad_fd_check(m, batch, TrainConfig(w_e=0.0, w_f=1.0), rng) > 0


def test_gradients_charge_term_with_qeq(rng):
    m = make_model(seed=7, use_electrostatics=True, use_charge_input=False)
    batch = labeled_batch(rng, m, with_charges=True)
    assert grad_fd_check(m, batch, TrainConfig(w_e=0.0, w_q=1.0), rng) > 0


def test_gradients_joint_energy_charge_with_qeq(rng):
    m = make_model(seed=8, use_electrostatics=True, use_charge_input=True)
    batch = labeled_batch(rng, m, with_charges=True)
    assert grad_fd_check(m, batch, TrainConfig(w_e=1.0, w_q=0.5), rng, n_probe=14) > 0


# --- training --------------------------------------------------------------

def test_single_structure_overfit(rng):
    m = make_model(seed=9)
    s = make_cluster(rng, n=4)
    data = [Sample(s, -3.0)] * 4
    cfg = TrainConfig(w_e=1.0, lr=0.05, epochs=800, seed=1)
    m, hist = train(m, data, cfg)
    assert abs(predict(s, m).e_total - (-3.0)) < 1e-6


def test_training_loss_monotone_after_backoff(rng):
    m = make_model(seed=10)
    data = make_lj_dataset(6, 5, seed=3)
    cfg = TrainConfig(w_e=1.0, w_f=0.1, lr=0.05, epochs=120, seed=2)
    m, hist = train(m, data, cfg)
    losses = [r.loss for r in hist]
    assert all(b <= a * (1.0 + 1e-9) + 1e-18 for a, b in zip(losses, losses[1:]))


def test_same_seed_bitwise_identical():
    runs = []
    for _ in range(2):
        m = PotentialModel.create(acsf=TEST_ACSF, hidden=(8, 8), seed=11)
        data = make_lj_dataset(5, 5, seed=4)
        cfg = TrainConfig(w_e=1.0, w_f=0.2, lr=0.03, epochs=40, seed=5)
        m, hist = train(m, data, cfg)
        runs.append((m, hist))
    for a, b in zip(runs[0][0].energy_net.parameters(), runs[1][0].energy_net.parameters()):
        assert np.array_equal(a, b)
    assert [r.loss for r in runs[0][1]] == [r.loss for r in runs[1][1]]


def test_momentum_optimizer_also_descends():
    m = PotentialModel.create(acsf=LJ_ACSF, hidden=(16,), seed=12)
    data = make_lj_dataset(8, 6, seed=6)
    cfg = TrainConfig(w_e=1.0, lr=0.05, epochs=150, seed=3, optimizer="momentum")
    m, hist = train(m, data, cfg)
    assert hist[-1].loss < hist[0].loss * 0.2


@pytest.mark.slow
def test_lj_synthetic_dataset_targets():
    data = make_lj_dataset(30, 8, seed=2024)
    m = PotentialModel.create(acsf=LJ_ACSF, hidden=(24, 24), seed=7)
    cfg = TrainConfig(w_e=1.0, w_f=0.03, lr=0.02, epochs=2000, seed=7,
                      tol_e=0.8, tol_f=25.0)
    m, hist = train(m, data, cfg)
    metrics, _ = evaluate(m, data)
    assert metrics["rmse_e_mev_atom"] < 1.0
    assert metrics["rmse_f_mev_a"] < 30.0
    assert len(hist) <= 2000


# --- evaluate ---------------------------------------------------------------

def test_evaluate_metrics_recompute_from_csv(rng):
    m = make_model(seed=13)
    data = labeled_batch(rng, m, n_frames=4)
    metrics, rows = evaluate(m, data)
    text = parity_csv(rows)
    lines = text.strip().splitlines()[1:]
    de2, nf_sse, nf = [], 0.0, 0
    for ln in lines:
        parts = ln.split(",")
        n_at = int(parts[1])
        de2.append(((float(parts[3]) - float(parts[2])) / n_at) ** 2)
        if parts[4]:
            nf_sse += float(parts[4])
            nf += int(parts[5])
    rmse_e = 1000.0 * np.sqrt(np.mean(de2))
    assert rmse_e == pytest.approx(metrics["rmse_e_mev_atom"], abs=1e-12)
    rmse_f = 1000.0 * np.sqrt(nf_sse / nf)
    assert rmse_f == pytest.approx(metrics["rmse_f_mev_a"], abs=1e-12)


def test_evaluate_missing_labels_absent_not_zero(rng):
    m = make_model(seed=14)
    data = [Sample(make_cluster(rng, n=4), -1.0)]
    metrics, rows = evaluate(m, data)
    assert metrics["rmse_f_mev_a"] is None
    assert metrics["rmse_q_me"] is None


def test_history_csv_columns(rng):
    m = make_model(seed=15)
    data = make_lj_dataset(4, 4, seed=8)
    cfg = TrainConfig(w_e=1.0, epochs=5, seed=5, val_fraction=0.25)
    m, hist = train(m, data, cfg)
    text = history_csv(hist)
    header = text.splitlines()[0].split(",")
    assert header == ["epoch", "rmse_e_train", "rmse_e_val", "rmse_f_train",
                      "rmse_f_val", "rmse_q_train", "rmse_q_val"]
    assert len(text.strip().splitlines()) == len(hist) + 1
