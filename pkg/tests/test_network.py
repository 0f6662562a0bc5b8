import numpy as np
import pytest

from mamforge.network import MLP


def perturbed(net, idx, flat_offset, h):
    clone = MLP(net.layer_sizes,
                weights=[w.copy() for w in net.weights],
                biases=[b.copy() for b in net.biases])
    p = clone.parameters()[idx]
    p.ravel()[flat_offset] += h
    return clone


@pytest.fixture
def net():
    return MLP([5, 7, 6, 1], seed=3)


def test_forward_shapes_and_determinism(net):
    x = np.random.default_rng(0).normal(size=(4, 5))
    y1 = net.forward(x)
    y2 = net.forward(x)
    assert y1.shape == (4,)
    assert np.array_equal(y1, y2)
    twin = MLP([5, 7, 6, 1], seed=3)
    assert np.array_equal(twin.forward(x), y1)


def test_input_gradient_matches_fd(net):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 5))
    _, g = net.input_gradient(x)
    h = 1e-6
    for b in range(3):
        for c in range(5):
            xp, xm = x.copy(), x.copy()
            xp[b, c] += h
            xm[b, c] -= h
            fd = (net.forward(xp)[b] - net.forward(xm)[b]) / (2 * h)
            assert g[b, c] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_param_gradient_value_term_matches_fd(net):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 5))
    cot = rng.normal(size=4)
    _, grads = net.param_gradient(x, cot_value=cot)
    h = 1e-6
    for idx in range(len(grads)):
        flat = grads[idx].ravel()
        for off in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            sp = cot @ perturbed(net, idx, off, h).forward(x)
            sm = cot @ perturbed(net, idx, off, -h).forward(x)
            assert flat[off] == pytest.approx((sp - sm) / (2 * h), rel=1e-5, abs=1e-9)


def test_param_gradient_tangent_term_matches_fd(net):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 5))
    u = rng.normal(size=(4, 5))

    def objective(model):
        _, g = model.input_gradient(x)
        return float(np.sum(u * g))

    _, grads = net.param_gradient(x, input_tangent=u)
    h = 1e-6
    for idx in range(len(grads)):
        flat = grads[idx].ravel()
        for off in rng.choice(flat.size, size=min(4, flat.size), replace=False):
            fd = (objective(perturbed(net, idx, off, h))
                  - objective(perturbed(net, idx, off, -h))) / (2 * h)
            assert flat[off] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_param_gradient_combined_is_sum_of_terms(net):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(6, 5))
    cot = rng.normal(size=6)
    u = rng.normal(size=(6, 5))
    _, g_both = net.param_gradient(x, cot_value=cot, input_tangent=u)
    _, g_val = net.param_gradient(x, cot_value=cot)
    _, g_tan = net.param_gradient(x, input_tangent=u)
    for a, b, c in zip(g_both, g_val, g_tan):
        assert np.allclose(a, b + c, rtol=1e-12, atol=1e-14)


def test_serialization_roundtrip_is_bitwise(net):
    clone = MLP.from_dict(net.to_dict())
    x = np.random.default_rng(5).normal(size=(2, 5))
    assert np.array_equal(clone.forward(x), net.forward(x))
    for a, b in zip(clone.parameters(), net.parameters()):
        assert np.array_equal(a, b)
