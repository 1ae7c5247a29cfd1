import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from crosssplit.errors import ConfigError, DimensionError, TrainingDivergedError
from crosssplit.nn import (
    LrSchedule,
    Mlp,
    OptimizerState,
    cross_entropy_soft,
    load_checkpoint,
    lr_at,
    one_hot,
    save_checkpoint,
    sgd_step,
    soft_ce_with_logits,
    softmax,
)

from .helpers import max_fd_error


def test_zero_network_outputs_zero_logits():
    net = Mlp([3, 5, 4])
    for p in net.params:
        p[...] = 0.0
    out = net.forward(np.random.default_rng(0).standard_normal((7, 3)))
    assert np.all(out.logits == 0.0)


def test_row_independent_of_batch():
    net = Mlp([4, 16, 3], seed=2)
    X = np.random.default_rng(1).standard_normal((32, 4))
    full = net.forward(X).logits
    for i in (0, 13, 31):
        np.testing.assert_allclose(net.forward(X[i:i + 1]).logits[0], full[i], rtol=0, atol=1e-14)


def test_hand_computed_forward():
    net = Mlp([2, 2, 2])
    net.weights[0][...] = [[1.0, -1.0], [2.0, 0.5]]
    net.biases[0][...] = [0.0, 0.25]
    net.weights[1][...] = [[1.0, 2.0], [-3.0, 1.0]]
    net.biases[1][...] = [0.5, -0.5]
    x = np.array([[1.0, 1.0], [-1.0, 0.5]])
    # row 0: z = [3, -0.25] -> h = [3, 0] -> logits [3.5, 5.5]
    # row 1: z = [0, 1.5]   -> h = [0, 1.5] -> logits [-4, 1]
    out = net.forward(x)
    np.testing.assert_allclose(out.logits, [[3.5, 5.5], [-4.0, 1.0]])
    np.testing.assert_allclose(out.embeddings, [[3.0, 0.0], [0.0, 1.5]])


def test_forward_dimension_error():
    with pytest.raises(DimensionError):
        Mlp([3, 4, 2]).forward(np.zeros((2, 4)))


def test_softmax_closed_forms():
    np.testing.assert_allclose(softmax(np.zeros((1, 5))), np.full((1, 5), 0.2))
    np.testing.assert_allclose(softmax(np.log([[1.0, 2.0, 3.0]])), [[1 / 6, 2 / 6, 3 / 6]], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)), st.floats(-1e3, 1e3))
def test_softmax_valid_and_shift_invariant(z, k):
    p = softmax(z)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(softmax(z + k), p, atol=1e-9)


def test_cross_entropy_values():
    y = one_hot([2], 4)
    assert cross_entropy_soft(y, y) <= 1e-9
    assert math.isclose(cross_entropy_soft(np.full((1, 10), 0.1), one_hot([3], 10)),
                        math.log(10), rel_tol=1e-9)


def test_cross_entropy_minimized_at_target():
    target = np.array([[0.2, 0.5, 0.3]])
    grid = [np.array([[a, b, 1 - a - b]]) for a in np.arange(0.05, 1, 0.05)
            for b in np.arange(0.05, 1, 0.05) if 1 - a - b > 1e-9]
    best = min(grid, key=lambda p: cross_entropy_soft(p, target))
    np.testing.assert_allclose(best, target, atol=1e-9)
    assert cross_entropy_soft(target, target) < min(
        cross_entropy_soft(p, target) for p in grid if not np.allclose(p, target))


def test_soft_ce_value_matches_plain_ce():
    z = np.random.default_rng(0).standard_normal((4, 3))
    t = softmax(np.random.default_rng(1).standard_normal((4, 3)))
    loss, _ = soft_ce_with_logits(z, t)
    assert math.isclose(loss, cross_entropy_soft(softmax(z), t), rel_tol=1e-12)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_backward_matches_finite_differences(activation, seed):
    rng = np.random.default_rng(seed)
    net = Mlp([2, 4, 3], activation, seed=seed)
    X = rng.standard_normal((5, 2))
    T = softmax(rng.standard_normal((5, 3)))

    def loss_and_grads():
        cache = net.forward(X)
        loss, d = soft_ce_with_logits(cache.logits, T)
        return loss, net.backward(cache, d)

    assert max_fd_error(net, loss_and_grads) <= 1e-4


def test_zero_output_gradient_gives_zero_grads():
    net = Mlp([3, 6, 2], seed=0)
    cache = net.forward(np.ones((4, 3)))
    assert all(np.all(g == 0) for g in net.backward(cache, np.zeros((4, 2))))


def test_backward_is_linear_over_batch():
    rng = np.random.default_rng(3)
    net = Mlp([3, 6, 2], seed=1)
    X = rng.standard_normal((6, 3))
    D = rng.standard_normal((6, 2))
    total = net.backward(net.forward(X), D)
    parts = [net.backward(net.forward(X[i:i + 1]), D[i:i + 1]) for i in range(6)]
    for k, g in enumerate(total):
        np.testing.assert_allclose(g, sum(p[k] for p in parts), atol=1e-12)


def _fixed_grads(net, value=1.0):
    return [np.full_like(p, value) for p in net.params]


def test_sgd_plain_step():
    net = Mlp([2, 3, 2], seed=0)
    before = [p.copy() for p in net.params]
    opt = OptimizerState.for_network(net, momentum=0.0, weight_decay=0.0)
    g = _fixed_grads(net, 0.5)
    sgd_step(net, g, opt, lr=0.1)
    for p, b in zip(net.params, before):
        np.testing.assert_allclose(p, b - 0.05)


def test_sgd_zero_grad_no_change():
    net = Mlp([2, 3, 2], seed=0)
    before = [p.copy() for p in net.params]
    opt = OptimizerState.for_network(net, momentum=0.9, weight_decay=0.0)
    sgd_step(net, _fixed_grads(net, 0.0), opt, lr=0.1)
    assert all(np.array_equal(p, b) for p, b in zip(net.params, before))


def test_sgd_momentum_unrolled():
    net = Mlp([2, 3, 2], seed=0)
    before = [p.copy() for p in net.params]
    opt = OptimizerState.for_network(net, momentum=0.9, weight_decay=0.0)
    g = _fixed_grads(net, 1.0)
    sgd_step(net, g, opt, lr=0.1)
    sgd_step(net, g, opt, lr=0.1)
    for p, b in zip(net.params, before):
        np.testing.assert_allclose(b - p, 0.1 * (1 + 1.9), rtol=1e-12)


def test_sgd_weight_decay_folded_into_velocity():
    net = Mlp([2, 2], seed=0)
    theta = net.params[0].copy()
    opt = OptimizerState.for_network(net, momentum=0.9, weight_decay=0.01)
    sgd_step(net, [np.zeros_like(p) for p in net.params], opt, lr=1.0)
    np.testing.assert_allclose(opt.velocity[0], 0.01 * theta)
    np.testing.assert_allclose(net.params[0], theta * 0.99)


def test_sgd_zero_lr_keeps_params():
    net = Mlp([2, 3, 2], seed=0)
    before = [p.copy() for p in net.params]
    sgd_step(net, _fixed_grads(net, 3.0), OptimizerState.for_network(net), lr=0.0)
    assert all(np.array_equal(p, b) for p, b in zip(net.params, before))


def test_sgd_rejects_nonfinite():
    net = Mlp([2, 3, 2], seed=0)
    grads = _fixed_grads(net)
    grads[1][0] = np.nan
    with pytest.raises(TrainingDivergedError):
        sgd_step(net, grads, OptimizerState.for_network(net), lr=0.1)


def test_cosine_schedule():
    s = LrSchedule("cosine", 60)
    assert lr_at(0, s, 0.05) == 0.05
    assert abs(lr_at(60, s, 0.05)) < 1e-18
    assert math.isclose(lr_at(30, s, 0.05), 0.025, rel_tol=1e-12)
    with pytest.raises(ConfigError):
        lr_at(61, s, 0.05)


def test_multistep_schedule():
    s = LrSchedule("multistep", 140, (80, 105), 0.1)
    assert lr_at(79, s, 0.02) == 0.02
    assert math.isclose(lr_at(80, s, 0.02), 0.002)
    assert math.isclose(lr_at(140, s, 0.02), 0.0002)


def test_checkpoint_roundtrip(tmp_path):
    net = Mlp([3, 5, 2], "tanh", seed=4)
    opt = OptimizerState.for_network(net, base_lr=0.02,
                                     schedule=LrSchedule("multistep", 20, (5, 9), 0.5))
    sgd_step(net, _fixed_grads(net, 0.3), opt, lr=0.1)
    path = tmp_path / "net.npz"
    save_checkpoint(path, net, opt)
    net2, opt2 = load_checkpoint(path)
    assert net2.layer_sizes == net.layer_sizes and net2.activation == "tanh"
    assert net2.version == 1
    for a, b in zip(net.params + opt.velocity, net2.params + opt2.velocity):
        assert np.array_equal(a, b)
    assert opt2.schedule == opt.schedule
    assert (opt2.momentum, opt2.weight_decay, opt2.base_lr) == (opt.momentum, opt.weight_decay, 0.02)


def test_distinct_seeds_distinct_networks():
    a, b = Mlp([4, 8, 2], seed=[0, 0]), Mlp([4, 8, 2], seed=[0, 1])
    assert not np.array_equal(a.weights[0], b.weights[0])
    assert np.array_equal(a.weights[0], Mlp([4, 8, 2], seed=[0, 0]).weights[0])
