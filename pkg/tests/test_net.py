import math

import numpy as np
import pytest

from tpmwatch.net import (EPS, DivergenceError, MultiHeadNet, NetConfig, OptimizerConfig, backward, forward,
                          init_optimizer, run_minibatches, sgd_step)


def tiny_net(w1, b1, w2, b2):
    """1 input -> 1 relu unit -> 1 head, weights given explicitly."""
    cfg = NetConfig(input_dim=1, hidden_dims=(1,), num_heads=1)
    return MultiHeadNet(cfg, [np.array([[w1]]), np.array([b1]), np.array([[w2]]), np.array([b2])])


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"input_dim": 0}, {"input_dim": 2, "num_heads": 0}, {"input_dim": 2, "hidden_dims": ()},
        {"input_dim": 2, "activation": "gelu"},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            NetConfig(**kwargs)

    def test_optimizer_rejects(self):
        with pytest.raises(ValueError):
            OptimizerConfig(name="rmsprop")
        with pytest.raises(ValueError):
            OptimizerConfig(lr=0.0)

    def test_shapes_follow_config(self):
        net = MultiHeadNet(NetConfig(input_dim=5, hidden_dims=(4, 3), num_heads=7))
        assert [p.shape for p in net.params] == [(5, 4), (4,), (4, 3), (3,), (3, 7), (7,)]

    def test_glorot_bounds(self):
        net = MultiHeadNet(NetConfig(input_dim=30, hidden_dims=(20,), num_heads=10, seed=3))
        assert np.abs(net.params[0]).max() <= np.sqrt(6 / 50)
        assert np.abs(net.params[2]).max() <= np.sqrt(6 / 30)
        assert not np.any(net.params[1]) and not np.any(net.params[3])

    def test_wrong_param_shapes(self):
        with pytest.raises(ValueError):
            MultiHeadNet(NetConfig(input_dim=1, hidden_dims=(1,)), [np.zeros((2, 1))])


class TestForward:
    def test_zero_weights_give_half(self, rng):
        net = MultiHeadNet(NetConfig(input_dim=4, hidden_dims=(3,), num_heads=5))
        net.set_flat(np.zeros(net.flat().size))
        np.testing.assert_array_equal(forward(net, rng.normal(size=(6, 4))), 0.5)

    def test_hand_computed_sigmoid(self):
        # h = relu(0.5 * 1 + 0.1) = 0.6; logit = 2 * 0.6 - 0.3 = 0.9
        out = forward(tiny_net(0.5, 0.1, 2.0, -0.3), np.array([1.0]))
        assert out[0] == pytest.approx(1.0 / (1.0 + math.exp(-0.9)), abs=1e-15)

    def test_clamped_at_large_logit(self):
        out = forward(tiny_net(1.0, 0.0, 100.0, 0.0), np.array([1.0]))
        assert out[0] == 1.0 - EPS
        out = forward(tiny_net(1.0, 0.0, -100.0, 0.0), np.array([1.0]))
        assert out[0] == EPS

    def test_batch_equals_rows(self, rng):
        net = MultiHeadNet(NetConfig(input_dim=3, hidden_dims=(5, 4), num_heads=2, seed=1))
        X = rng.normal(size=(7, 3))
        rows = np.stack([forward(net, x) for x in X])
        np.testing.assert_allclose(forward(net, X), rows, rtol=0, atol=1e-15)

    def test_output_range_under_extreme_inputs(self, rng):
        net = MultiHeadNet(NetConfig(input_dim=3, hidden_dims=(8,), num_heads=4, seed=2))
        out = forward(net, rng.normal(scale=1e6, size=(50, 3)))
        assert np.all((out >= EPS) & (out <= 1 - EPS))

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_input(self, bad):
        net = MultiHeadNet(NetConfig(input_dim=2))
        with pytest.raises(ValueError, match="non-finite"):
            forward(net, np.array([1.0, bad]))

    def test_wrong_width(self):
        with pytest.raises(ValueError):
            forward(MultiHeadNet(NetConfig(input_dim=2)), np.ones(3))


class TestBackward:
    def test_zero_upstream(self, rng):
        net = MultiHeadNet(NetConfig(input_dim=3, hidden_dims=(4,), num_heads=2))
        _, cache = forward(net, rng.normal(size=(5, 3)), return_cache=True)
        for g in backward(net, cache, np.zeros((5, 2))):
            assert not np.any(g)

    def test_head_weight_by_hand(self):
        # d o / d w2 = sigma'(logit) * h with h = 0.6 and logit = 0.9
        net = tiny_net(0.5, 0.1, 2.0, -0.3)
        _, cache = forward(net, np.array([1.0]), return_cache=True)
        grads = backward(net, cache, np.array([1.0]))
        s = 1.0 / (1.0 + math.exp(-0.9))
        assert grads[2][0, 0] == pytest.approx(s * (1 - s) * 0.6, rel=1e-12)
        assert grads[0][0, 0] == pytest.approx(s * (1 - s) * 2.0 * 1.0, rel=1e-12)

    def test_clipped_head_passes_no_gradient(self):
        net = tiny_net(1.0, 0.0, 100.0, 0.0)
        _, cache = forward(net, np.array([1.0]), return_cache=True)
        assert all(not np.any(g) for g in backward(net, cache, np.array([1.0])))

    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    def test_finite_differences(self, rng, activation):
        net = MultiHeadNet(NetConfig(input_dim=3, hidden_dims=(4, 3), num_heads=2, seed=5, activation=activation))
        X = rng.normal(size=(6, 3))
        up = rng.normal(size=(6, 2))
        _, cache = forward(net, X, return_cache=True)
        analytic = np.concatenate([g.ravel() for g in backward(net, cache, up)])
        theta = net.flat()
        numeric = np.empty_like(theta)
        h = 1e-6

        def f(t):
            net.set_flat(t)
            return np.sum(up * forward(net, X))

        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            numeric[i] = (f(theta + e) - f(theta - e)) / (2 * h)
        net.set_flat(theta)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


class TestOptimizer:
    def scalar_net(self, value):
        net = tiny_net(value, 0.0, 1.0, 0.0)
        return net

    def test_zero_gradient_leaves_parameters(self):
        net = self.scalar_net(0.3)
        before = net.flat()
        state = init_optimizer(net)
        for _ in range(3):
            sgd_step(net, net.zero_grads(), state)
        np.testing.assert_array_equal(net.flat(), before)

    def test_adam_steps_by_hand(self):
        # constant gradient g: bias-corrected m_hat = g and v_hat = g^2 at every step,
        # so each step moves by lr * g / (|g| + eps)
        net = self.scalar_net(0.3)
        state = init_optimizer(net)
        g = [np.array([[0.5]]), np.zeros(1), np.zeros((1, 1)), np.zeros(1)]
        sgd_step(net, g, state)
        step = 1e-3 * 0.5 / (0.5 + 1e-8)
        assert net.params[0][0, 0] == pytest.approx(0.3 - step, abs=1e-15)
        sgd_step(net, g, state)
        assert net.params[0][0, 0] == pytest.approx(0.3 - 2 * step, abs=1e-15)

    def test_plain_sgd(self):
        net = self.scalar_net(0.3)
        opt = OptimizerConfig(name="sgd", lr=0.1)
        sgd_step(net, [np.array([[0.5]]), np.zeros(1), np.zeros((1, 1)), np.zeros(1)], init_optimizer(net, opt), opt)
        assert net.params[0][0, 0] == pytest.approx(0.25, abs=1e-15)

    def test_non_finite_gradient_diverges(self):
        net = self.scalar_net(0.3)
        with pytest.raises(DivergenceError, match="diverged"):
            sgd_step(net, [np.array([[np.nan]]), np.zeros(1), np.zeros((1, 1)), np.zeros(1)], init_optimizer(net))

    def test_identical_runs_are_bitwise_identical(self, rng):
        X = rng.normal(size=(64, 3))
        target = rng.uniform(size=(64, 2))

        def step(o, idx):
            return {"total": ((o - target[idx]) ** 2).sum(axis=1)}, 2 * (o - target[idx]) / idx.size

        nets = [MultiHeadNet(NetConfig(input_dim=3, hidden_dims=(5,), num_heads=2, seed=9)) for _ in range(2)]
        for net in nets:
            run_minibatches(net, X, 4, 16, 0, step)
        np.testing.assert_array_equal(nets[0].flat(), nets[1].flat())

    def test_non_finite_loss_diverges(self, rng):
        net = MultiHeadNet(NetConfig(input_dim=2, num_heads=1))

        def step(o, idx):
            return {"total": np.full(idx.size, np.inf)}, np.zeros_like(o)

        with pytest.raises(DivergenceError, match="diverged"):
            run_minibatches(net, rng.normal(size=(8, 2)), 1, 4, 0, step)
