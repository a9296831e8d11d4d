"""Tests for the dense feed-forward engine against closed forms and oracles."""

import json

import numpy as np
import pytest

from involute import nn
from involute.nn import (
    ACTIVATIONS,
    AdamState,
    DenseLayer,
    MLP,
    adam_step,
    backward,
    build_mlp,
    finite_diff_grad,
    forward,
    get_activation,
    init_xavier,
    input_gradient,
    mlp_from_json,
    mlp_to_json,
    mse_loss,
    value,
    value_and_input_gradient,
)


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mask = np.maximum(np.abs(a), np.abs(b)) > floor
    if not mask.any():
        return 0.0
    denom = np.maximum(np.abs(a[mask]), np.abs(b[mask]))
    return float(np.max(np.abs(a[mask] - b[mask]) / denom))


class TestActivations:
    @pytest.mark.parametrize("kind", sorted(ACTIVATIONS))
    def test_derivative_consistency(self, kind):
        act = get_activation(kind)
        z = np.linspace(-5.0, 5.0, 401)
        if kind == "relu":
            z = z[np.abs(z) > 0.05]
        h = 1e-6
        fd = (act.f(z + h) - act.f(z - h)) / (2 * h)
        assert rel_err(act.df(z), fd, floor=1e-6) <= 1e-5

    @pytest.mark.parametrize("kind", ["sigmoid", "tanh", "swish", "softplus", "snake"])
    def test_second_derivative_consistency(self, kind):
        act = get_activation(kind)
        z = np.linspace(-4.0, 4.0, 201)
        h = 1e-5
        fd = (act.df(z + h) - act.df(z - h)) / (2 * h)
        assert rel_err(act.d2f(z), fd, floor=1e-5) <= 1e-4

    def test_sigmoid_complement(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(-30, 30, 1000)
        s = get_activation("sigmoid")
        assert np.max(np.abs(s.f(z) + s.f(-z) - 1.0)) <= 1e-12

    def test_snake_definition(self):
        s = get_activation("snake")
        z = np.array([0.0, 1.0, -2.5])
        np.testing.assert_allclose(s.f(z), z + np.sin(z))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            get_activation("gelu")


class TestForward:
    def test_zero_weights_yield_bias(self):
        net = MLP([DenseLayer(np.zeros((1, 3)), np.array([4.25]), get_activation("identity"))])
        for x in (np.zeros(3), np.ones(3), np.array([3.0, -1.0, 0.5])):
            assert value(net, x) == 4.25

    def test_identity_layer(self):
        net = MLP([DenseLayer(np.eye(3), np.zeros(3), get_activation("identity"))])
        x = np.array([0.1, -2.0, 3.5])
        y, _ = forward(net, x)
        np.testing.assert_array_equal(y, x)

    def test_against_naive_reimplementation(self):
        net = build_mlp((2, 10, 10, 1), "sigmoid", seed=12)
        x = np.array([0.3, 0.3])

        def naive(v):
            a = v
            for layer in net.layers:
                z = np.array([layer.W[i] @ a + layer.b[i] for i in range(layer.W.shape[0])])
                a = np.array([layer.act.f(np.array([zz]))[0] for zz in z])
            return a[0]

        assert abs(value(net, x) - naive(x)) <= 1e-12

    def test_width_mismatch(self):
        net = build_mlp((2, 4, 1), "tanh", seed=0)
        with pytest.raises(ValueError):
            forward(net, np.ones(3))


class TestBackward:
    def test_linear_closed_form(self):
        w, b, x, t = 1.7, -0.3, 0.9, 2.0
        net = MLP([DenseLayer(np.array([[w]]), np.array([b]), get_activation("identity"))])
        y, cache = forward(net, np.array([x]))
        grads = backward(net, cache, np.array([2.0 * (y[0] - t)]))
        expect = 2.0 * (w * x + b - t)
        np.testing.assert_allclose(grads[0][0], [[expect * x]])
        np.testing.assert_allclose(grads[0][1], [expect])

    def test_random_sigmoid_finite_difference(self):
        net = build_mlp((3, 6, 1), "sigmoid", seed=4)
        rng = np.random.default_rng(2)
        xs = rng.normal(size=(4, 3))
        ts = rng.normal(size=4)

        def loss():
            y, _ = forward(net, xs)
            return mse_loss(y[:, 0], ts)

        y, cache = forward(net, xs)
        grads = backward(net, cache, (2.0 / 4) * (y - ts[:, None]))
        params = nn.get_params(net)
        flat = nn.flatten_grads(grads)
        for p, g in zip(params, flat):
            fd = finite_diff_grad(lambda _: loss(), p)
            assert rel_err(g, fd) <= 1e-5

    def test_relu_equals_induced_linear_map(self):
        net = build_mlp((2, 4, 1), "relu", seed=6)
        for layer in net.layers:
            layer.b = layer.b + 1.0  # push all pre-activations positive
        x = np.array([0.2, 0.1])
        y, cache = forward(net, x)
        assert all((z > 0).all() for z in cache.zs[:-1])
        grads = backward(net, cache, np.array([1.0]))
        # with relu active everywhere the net is linear: dy/dW2 = a1 = W1 x + b1
        np.testing.assert_allclose(grads[1][0], (net.layers[0].W @ x + net.layers[0].b)[None, :])


class TestInputGradient:
    def test_linear_net_returns_weights(self):
        w = np.array([[0.5, -1.25, 2.0]])
        net = MLP([DenseLayer(w, np.zeros(1), get_activation("identity"))])
        np.testing.assert_array_equal(input_gradient(net, np.ones(3)), w[0])

    def test_random_net_finite_difference(self):
        net = build_mlp((3, 8, 8, 1), "sigmoid", seed=9)
        rng = np.random.default_rng(5)
        for _ in range(5):
            x = rng.normal(size=3)
            fd = finite_diff_grad(lambda v: value(net, v), x)
            assert rel_err(input_gradient(net, x), fd) <= 1e-5

    def test_batched_matches_single(self):
        net = build_mlp((2, 5, 1), "tanh", seed=1)
        xs = np.random.default_rng(3).normal(size=(6, 2))
        ys, gs = value_and_input_gradient(net, xs)
        for i in range(6):
            yi, gi = value_and_input_gradient(net, xs[i])
            assert ys[i] == yi
            np.testing.assert_array_equal(gs[i], gi)


class TestDirectionalParamGrads:
    @pytest.mark.parametrize("kind", ["tanh", "sigmoid", "softplus", "swish", "snake"])
    def test_against_finite_differences(self, kind):
        net = build_mlp((2, 6, 6, 1), kind, seed=8)
        rng = np.random.default_rng(21)
        xs = rng.normal(size=(4, 2))
        cs = rng.normal(size=(4, 2))
        an = nn.flatten_grads(nn.directional_param_grads(net, xs, cs))

        def phi():
            return float(np.sum(cs * input_gradient(net, xs)))

        for p, g in zip(nn.get_params(net), an):
            fd = finite_diff_grad(lambda _: phi(), p)
            assert rel_err(g, fd, floor=1e-7) <= 1e-4


class TestAdam:
    def test_zero_gradient_no_motion(self):
        params = [np.array([1.0, -2.0]), np.array([[3.0]])]
        state = AdamState(params, lr=0.1)
        out = adam_step(state, params, [np.zeros(2), np.zeros((1, 1))])
        for a, b in zip(out, params):
            np.testing.assert_array_equal(a, b)

    def test_first_step_hand_recurrence(self):
        g = np.array([0.3])
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        params = [np.array([1.0])]
        state = AdamState(params, lr=lr, beta1=b1, beta2=b2, eps=eps)
        out = adam_step(state, params, [g])
        m = (1 - b1) * g / (1 - b1)
        v = (1 - b2) * g * g / (1 - b2)
        expect = params[0] - lr * m / (np.sqrt(v) + eps)
        np.testing.assert_allclose(out[0], expect, rtol=1e-15)

    def test_determinism(self):
        def run():
            net = build_mlp((1, 5, 1), "tanh", seed=3)
            xs = np.linspace(-1, 1, 20)[:, None]
            ts = np.cos(xs[:, 0])
            params = nn.get_params(net)
            state = AdamState(params, lr=0.01)
            for _ in range(50):
                y, cache = forward(net, xs)
                grads = backward(net, cache, (2.0 / 20) * (y - ts[:, None]))
                params = adam_step(state, params, nn.flatten_grads(grads))
                nn.set_params(net, params)
            return [p.copy() for p in params]

        a, b = run(), run()
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa, pb)


class TestMseAndInit:
    def test_identical_is_zero(self):
        assert mse_loss([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_arithmetic(self):
        assert mse_loss([1.0, 0.0], [0.0, 0.0]) == 0.5

    def test_noise_floor_law_of_large_numbers(self):
        rng = np.random.default_rng(44)
        noise = rng.normal(0.0, 0.25, 200_000)
        assert abs(mse_loss(noise, np.zeros_like(noise)) - 0.0625) < 0.002

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mse_loss([], [])

    def test_xavier_reproducible_and_bounded(self):
        a = init_xavier((7, 5), seed=2)
        b = init_xavier((7, 5), seed=2)
        np.testing.assert_array_equal(a, b)
        assert np.max(np.abs(a)) <= np.sqrt(6.0 / 12.0)
        c = init_xavier((7, 5), seed=3)
        assert np.any(a != c)


class TestFiniteDiff:
    def test_square(self):
        g = finite_diff_grad(lambda v: float(v[0] ** 2), np.array([3.0]))
        assert abs(g[0] - 6.0) <= 1e-6

    def test_matches_input_gradient_on_trained_net(self):
        net = build_mlp((2, 6, 1), "tanh", seed=13)
        x = np.array([0.4, -0.9])
        fd = finite_diff_grad(lambda v: value(net, v), x)
        assert rel_err(input_gradient(net, x), fd) <= 1e-5

    def test_constant(self):
        g = finite_diff_grad(lambda v: 1.5, np.ones(4))
        np.testing.assert_array_equal(g, np.zeros(4))

    def test_bad_h(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda v: 0.0, np.ones(2), h=0.0)


class TestGradientSoundnessSweep:
    def test_twenty_random_nets_all_activations(self):
        rng = np.random.default_rng(7)
        kinds = ["identity", "sigmoid", "tanh", "swish", "softplus", "snake", "relu"]
        for case in range(20):
            kind = kinds[case % len(kinds)]
            sizes = (int(rng.integers(1, 4)), int(rng.integers(2, 7)), 1)
            net = build_mlp(sizes, kind, seed=case)
            if kind == "relu":  # keep pre-activations away from the kink
                for layer in net.layers:
                    layer.b = layer.b + 0.75
            xs = rng.normal(size=(3, sizes[0])) * 0.5
            ts = rng.normal(size=3)
            y, cache = forward(net, xs)
            grads = backward(net, cache, (2.0 / 3) * (y - ts[:, None]))

            def loss():
                yy, _ = forward(net, xs)
                return mse_loss(yy[:, 0], ts)

            for p, g in zip(nn.get_params(net), nn.flatten_grads(grads)):
                fd = finite_diff_grad(lambda _: loss(), p)
                assert rel_err(g, fd) <= 1e-5, f"case {case} ({kind})"
            x = xs[0]
            fd = finite_diff_grad(lambda v: value(net, v), x)
            assert rel_err(input_gradient(net, x), fd) <= 1e-5, f"case {case} ({kind})"


class TestSerialization:
    def test_round_trip_bit_exact(self):
        net = build_mlp((3, 7, 5, 1), "swish", seed=17)
        doc = json.loads(json.dumps(mlp_to_json(net)))
        back = mlp_from_json(doc)
        for la, lb in zip(net.layers, back.layers):
            np.testing.assert_array_equal(la.W, lb.W)
            np.testing.assert_array_equal(la.b, lb.b)
            assert la.act.name == lb.act.name
        x = np.array([0.1, 0.2, -0.3])
        assert value(net, x) == value(back, x)

    def test_malformed_rejected(self):
        with pytest.raises(ValueError):
            mlp_from_json({"layers": [{"activation": "tanh", "W": [[1.0]], "b": [1.0, 2.0]}]})
