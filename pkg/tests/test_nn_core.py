import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grlforge import nn_core as nn
from grlforge.nn_core import (
    FLATTEN,
    RELU,
    ConfigError,
    Network,
    ParamSet,
    ShapeError,
    TrainConfig,
    conv2d,
    linear,
    maxpool,
)
from oracles import central_diff, conv_loops, linear_loops, rel_err


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestLinear:
    def test_identity(self):
        out = nn.linear_forward([[1.0, 2.0]], np.eye(2), [0.0, 0.0])
        np.testing.assert_array_equal(out, [[1.0, 2.0]])

    def test_bias_only(self):
        out = nn.linear_forward([[1.0, 2.0]], np.zeros((2, 2)), [3.0, 4.0])
        np.testing.assert_array_equal(out, [[3.0, 4.0]])

    def test_matches_loop_oracle(self, rng):
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        np.testing.assert_allclose(nn.linear_forward(x, w, b), linear_loops(x, w, b), rtol=0, atol=1e-12)

    def test_shape_mismatch_names_dims(self):
        with pytest.raises(ShapeError, match="3 != weight rows 4"):
            nn.linear_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))

    def test_backward_zero_upstream(self, rng):
        gx, gw, gb = nn.linear_backward(rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), np.zeros((3, 2)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_backward_identity_weight(self, rng):
        g = rng.normal(size=(3, 2))
        gx, _, _ = nn.linear_backward(rng.normal(size=(3, 2)), np.eye(2), g)
        np.testing.assert_array_equal(gx, g)

    def test_backward_finite_difference(self, rng):
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        go = rng.normal(size=(3, 2))
        gx, gw, gb = nn.linear_backward(x, w, go)
        f = lambda: float((nn.linear_forward(x, w, b) * go).sum())
        assert rel_err(gx, central_diff(f, x)) < 1e-6
        assert rel_err(gw, central_diff(f, w)) < 1e-6
        assert rel_err(gb, central_diff(f, b)) < 1e-6


class TestConv:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 1, 5, 6))
        out = nn.conv2d_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_box_filter_on_constant(self):
        x = np.full((1, 1, 6, 6), 5.0)
        out = nn.conv2d_forward(x, np.full((1, 1, 3, 3), 1 / 9), np.zeros(1))
        np.testing.assert_allclose(out, 5.0, atol=1e-12)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_matches_loop_oracle(self, rng, stride, pad):
        x, k, b = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
        np.testing.assert_allclose(
            nn.conv2d_forward(x, k, b, stride, pad), conv_loops(x, k, b, stride, pad), rtol=0, atol=1e-12
        )

    def test_non_integral_output_rejected(self):
        with pytest.raises(ConfigError):
            nn.conv2d_forward(np.zeros((1, 1, 6, 6)), np.zeros((1, 1, 3, 3)), np.zeros(1), stride=2)

    def test_backward_zero(self, rng):
        x, k = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
        grads = nn.conv2d_backward(x, k, np.zeros((1, 3, 3, 3)))
        assert all(not g.any() for g in grads)

    def test_single_pixel_grad_is_input_patch(self, rng):
        x, k = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(1, 2, 3, 3))
        go = np.zeros((1, 1, 3, 3))
        go[0, 0, 1, 2] = 1.0
        _, gk, gb = nn.conv2d_backward(x, k, go)
        np.testing.assert_array_equal(gk[0], x[0, :, 1:4, 2:5])
        assert gb[0] == 1.0

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_backward_finite_difference(self, rng, stride, pad):
        x, k, b = rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
        out = nn.conv2d_forward(x, k, b, stride, pad)
        go = rng.normal(size=out.shape)
        gx, gk, gb = nn.conv2d_backward(x, k, go, stride, pad)
        f = lambda: float((nn.conv2d_forward(x, k, b, stride, pad) * go).sum())
        assert rel_err(gx, central_diff(f, x)) < 1e-6
        assert rel_err(gk, central_diff(f, k)) < 1e-6
        assert rel_err(gb, central_diff(f, b)) < 1e-6


class TestReluPool:
    def test_relu(self):
        np.testing.assert_array_equal(nn.relu([-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0])

    def test_relu_backward_zero_convention(self):
        np.testing.assert_array_equal(nn.relu_backward([-1.0, 0.0, 2.0], [5.0, 5.0, 5.0]), [0.0, 0.0, 5.0])

    def test_relu_finite_difference(self, rng):
        x = rng.normal(size=(4, 5))
        x[np.abs(x) < 1e-3] = 0.5
        go = rng.normal(size=x.shape)
        f = lambda: float((nn.relu(x) * go).sum())
        assert rel_err(nn.relu_backward(x, go), central_diff(f, x)) < 1e-6

    def test_pool_basic(self):
        out, idx = nn.maxpool2d(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), 2)
        assert out.item() == 4.0
        assert idx.item() == 3  # flat position of (1, 1)

    def test_pool_tie_breaks_first(self):
        x = np.full((1, 1, 4, 4), 7.0)
        _, idx = nn.maxpool2d(x, 2)
        np.testing.assert_array_equal(idx[0, 0], [[0, 2], [8, 10]])

    def test_pool_non_integral(self):
        with pytest.raises(ConfigError):
            nn.maxpool2d(np.zeros((1, 1, 5, 5)), 2)

    @pytest.mark.parametrize("window,stride", [(2, 2), (3, 1), (2, 1)])
    def test_pool_backward_finite_difference(self, rng, window, stride):
        x = rng.permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) * 0.01  # distinct values: no ties
        x = x.astype(np.float64)
        if (6 - window) % stride:
            pytest.skip("non-integral")
        out, idx = nn.maxpool2d(x, window, stride)
        go = rng.normal(size=out.shape)
        g = nn.maxpool2d_backward(idx, go, x.shape)
        f = lambda: float((nn.maxpool2d(x, window, stride)[0] * go).sum())
        assert rel_err(g, central_diff(f, x)) < 1e-6


class TestSoftmaxXent:
    def test_uniform(self):
        loss, _ = nn.softmax_cross_entropy([[0.0, 0.0]], [0])
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_stable(self):
        loss, grad = nn.softmax_cross_entropy([[1000.0, -1000.0]], [0])
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(grad).all()

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            nn.softmax_cross_entropy([[0.0, 0.0]], [2])

    def test_grad_finite_difference(self, rng):
        logits, labels = rng.normal(size=(4, 3)), np.array([0, 2, 1, 2])
        _, g = nn.softmax_cross_entropy(logits, labels)
        num = central_diff(lambda: nn.softmax_cross_entropy(logits, labels)[0], logits)
        assert rel_err(g, num) < 1e-6

    @given(c=st.integers(2, 12), b=st.integers(1, 6), v=st.floats(-50, 50))
    def test_uniform_logits_give_log_c(self, c, b, v):
        loss, _ = nn.softmax_cross_entropy(np.full((b, c), v), np.zeros(b, dtype=int))
        assert loss == pytest.approx(math.log(c), rel=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_loss_non_negative(self, seed):
        r = np.random.default_rng(seed)
        logits = r.normal(scale=20, size=(5, 4))
        assert nn.softmax_cross_entropy(logits, r.integers(0, 4, size=5))[0] >= 0


class TestSGD:
    def _single(self, p, g):
        ps = ParamSet()
        ps.add("p", np.array([p]))
        ps.grads["p"][:] = g
        return ps

    def test_plain_step(self):
        ps = self._single(1.0, 2.0)
        nn.sgd_step(ps, TrainConfig(lr=0.1, momentum=0.0))
        assert ps.params["p"][0] == pytest.approx(0.8, abs=1e-15)
        assert ps.grads["p"][0] == 0.0

    def test_zero_gradient(self):
        ps = self._single(1.5, 0.0)
        nn.sgd_step(ps, TrainConfig(lr=0.1, momentum=0.0))
        assert ps.params["p"][0] == 1.5

    def test_momentum_unrolled(self):
        lr, mu, g1, g2 = 0.1, 0.9, 2.0, -1.0
        ps = self._single(1.0, g1)
        cfg = TrainConfig(lr=lr, momentum=mu)
        nn.sgd_step(ps, cfg)
        ps.grads["p"][:] = g2
        nn.sgd_step(ps, cfg)
        v1 = g1
        p1 = 1.0 - lr * v1
        v2 = mu * v1 + g2
        p2 = p1 - lr * v2
        assert abs(ps.params["p"][0] - p2) < 1e-12

    def test_lr_zero_bit_identical(self, rng):
        net = Network([linear(4, 3)], (4,), rng)
        before = {k: v.tobytes() for k, v in net.params.params.items()}
        for g in net.params.grads.values():
            g[...] = rng.normal(size=g.shape)
        nn.sgd_step(net.params, TrainConfig(lr=0.0))
        assert {k: v.tobytes() for k, v in net.params.params.items()} == before

    def test_lr_schedule(self):
        assert nn.lr_at(TrainConfig(lr=0.2), 0.7) == 0.2
        cfg = TrainConfig(lr=0.2, lr_schedule="annealed")
        assert nn.lr_at(cfg, 0.0) == 0.2
        assert nn.lr_at(cfg, 1.0) == pytest.approx(0.2 / 11 ** 0.75, rel=1e-15)
        rates = [nn.lr_at(cfg, p / 10) for p in range(11)]
        assert all(a > b for a, b in zip(rates, rates[1:]))

    @pytest.mark.parametrize(
        "kw", [{"lr": -1}, {"momentum": 1.0}, {"batch_size": 0}, {"epochs": 0}, {"seed": -1}, {"lr_schedule": "cosine"}]
    )
    def test_config_bounds(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


class TestNetwork:
    def test_shape_checked_at_build(self):
        with pytest.raises(ShapeError):
            Network([FLATTEN, linear(10, 2)], (1, 3, 3))

    def test_glorot_bounds(self, rng):
        net = Network([linear(30, 10)], (30,), rng)
        assert np.abs(net.params.params["0.w"]).max() <= math.sqrt(6 / 40)
        assert not net.params.params["0.b"].any()

    def test_gradcheck_linear(self, rng):
        net = Network([linear(5, 3)], (5,), rng)
        assert nn.grad_check(net, rng.normal(size=(4, 5)), [0, 1, 2, 1]) < 1e-6

    def test_gradcheck_stack(self, rng):
        specs = [conv2d(2, 3, 3, padding=1), RELU, maxpool(2), FLATTEN, linear(3 * 3 * 3, 2)]
        net = Network(specs, (2, 6, 6), rng)
        assert nn.grad_check(net, rng.normal(size=(3, 2, 6, 6)), [0, 1, 1]) < 1e-5

    def test_gradcheck_no_params(self, rng):
        assert nn.grad_check(Network([RELU], (2,)), rng.normal(size=(3, 2)), [0, 1, 0]) == 0.0

    def test_gradcheck_epsilon_range(self, rng):
        with pytest.raises(ConfigError):
            nn.grad_check(Network([linear(2, 2)], (2,)), np.zeros((1, 2)), [0], epsilon=1e-2)

    def test_deterministic(self):
        outs = []
        for _ in range(2):
            r = np.random.default_rng(7)
            net = Network([conv2d(1, 2, 3), RELU, FLATTEN, linear(2 * 4 * 4, 2)], (1, 6, 6), r)
            outs.append(net(r.normal(size=(3, 1, 6, 6))).tobytes())
        assert outs[0] == outs[1]
