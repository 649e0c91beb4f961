import numpy as np
import pytest

from gradcheck import check_net, max_error_over_nets
from transport_alloc.nn import (MlpParams, backward, forward, init_mlp, load_checkpoint,
                                save_checkpoint, sigmoid)


def test_sigmoid_values():
    np.testing.assert_allclose(sigmoid(np.array([0.0, 2.0, -2.0])),
                               [0.5, 1 / (1 + np.exp(-2)), 1 / (1 + np.exp(2))], rtol=1e-14)
    assert np.isfinite(sigmoid(np.array([1e4, -1e4]))).all()


def test_gradients_match_finite_differences():
    assert max_error_over_nets(30, seed=1) < 1e-4


def test_full_size_actor_and_critic_gradients():
    rng = np.random.default_rng(2)
    actor = init_mlp([26, 16, 16, 16, 16, 6], rng, "sigmoid", last_scale=0.5)
    critic = init_mlp([64, 16, 16, 16, 16, 1], rng, "linear", last_scale=0.5)
    assert check_net(actor, rng, batch=2) < 1e-4
    assert check_net(critic, rng, batch=2) < 1e-4


def test_linear_unit_derivative():
    net = MlpParams([np.array([[1.7]])], [np.zeros(1)], "linear")
    x = np.array([[0.3]])
    _, cache = forward(net, x, return_cache=True)
    grads, g_in = backward(net, cache, np.array([[2.0]]))
    assert grads[0][0, 0] == pytest.approx(0.3 * 2.0)
    assert g_in[0, 0] == pytest.approx(1.7 * 2.0)


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(0)
    net = init_mlp([4, 5, 2], rng)
    _, cache = forward(net, rng.normal(size=(3, 4)), return_cache=True)
    grads, _ = backward(net, cache, np.zeros((3, 2)))
    assert all(not g.any() for g in grads)


def test_shape_errors():
    rng = np.random.default_rng(0)
    net = init_mlp([4, 5, 2], rng)
    with pytest.raises(ValueError):
        forward(net, np.zeros(3))
    _, cache = forward(net, np.zeros((2, 4)), return_cache=True)
    with pytest.raises(ValueError):
        backward(net, cache, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        MlpParams([np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])
    with pytest.raises(ValueError):
        MlpParams([np.zeros((2, 3))], [np.zeros(3)], "softmax")


def test_single_and_batched_agree():
    rng = np.random.default_rng(5)
    net = init_mlp([3, 4, 2], rng, "tanh", last_scale=1.0)
    x = rng.normal(size=(4, 3))
    batched = forward(net, x)
    for row, out in zip(x, batched):
        np.testing.assert_allclose(forward(net, row), out, rtol=1e-14, atol=1e-15)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    nets = [init_mlp([26, 8, 8, 6], rng, last_scale=1.0), init_mlp([26, 8, 6], rng)]
    path = tmp_path / "ck.json"
    save_checkpoint(path, nets, {"k": 2})
    back = load_checkpoint(path)
    assert [b.sizes for b in back] == [n.sizes for n in nets]
    for a, b in zip(nets, back):
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(x, y)
