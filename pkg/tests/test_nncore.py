import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from v2s_lab.errors import ContractError, ShapeError, ValidationError
from v2s_lab.nncore import (
    AdaGradState,
    DenseLayer,
    GradientBundle,
    Network,
    adagrad_step,
    analytic_gradients,
    dense_network,
    fold_input_affine,
    fold_output_affine,
    gradient_check,
    network_backward,
    network_forward,
    relu_margin,
)


def _quadratic(target):
    def loss(out):
        d = out - target
        return float(np.sum(d * d)), 2.0 * d

    return loss


def _hand_forward(weights, biases, acts, x):
    """Straight-line scalar evaluation; no numpy linear algebra."""
    rows = []
    for frame in x.tolist():
        a = frame
        for W, b, act in zip(weights, biases, acts):
            z = [sum(W[o][i] * a[i] for i in range(len(a))) + b[o] for o in range(len(b))]
            if act == "sigmoid":
                a = [1.0 / (1.0 + math.exp(-v)) for v in z]
            elif act == "relu":
                a = [v if v > 0 else 0.0 for v in z]
            elif act == "softmax":
                m = max(z)
                e = [math.exp(v - m) for v in z]
                a = [v / sum(e) for v in e]
            else:
                a = z
        rows.append(a)
    return np.array(rows)


class TestForward:
    def test_identity_layer(self):
        net = Network([DenseLayer(np.eye(3), np.zeros(3), "identity")])
        x = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(net(x), x)

    def test_softmax_rows_sum_to_one(self, rng):
        net = dense_network([5, 7, 4], ["sigmoid", "softmax"], 3)
        out = net(10 * rng.standard_normal((9, 5)))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((out > 0) & (out < 1))

    @pytest.mark.parametrize("acts", [("sigmoid", "softmax"), ("relu", "identity"), ("sigmoid", "sigmoid")])
    def test_matches_hand_evaluation(self, acts):
        net = dense_network([4, 3, 2], acts, seed=7)
        for l in net.layers:
            l.bias = np.linspace(-0.3, 0.3, l.out_dim)
        x = np.array([[0.5, -1.0, 2.0, 0.0], [1.5, 0.25, -0.75, 1.0], [-2.0, 0.1, 0.3, -0.4]])
        expected = _hand_forward(
            [l.weight.tolist() for l in net.layers], [l.bias.tolist() for l in net.layers], acts, x
        )
        np.testing.assert_allclose(net(x), expected, rtol=1e-13, atol=1e-15)

    def test_deterministic(self, rng):
        net = dense_network([6, 8, 3], ["relu", "softmax"], 0)
        x = rng.standard_normal((5, 6))
        assert net(x).tobytes() == net(x).tobytes()

    def test_shape_and_finite_checks(self):
        net = dense_network([3, 2], ["identity"], 0)
        with pytest.raises(ShapeError):
            net(np.zeros((2, 4)))
        with pytest.raises(ValidationError):
            net(np.array([[0.0, np.nan, 1.0]]))

    def test_invariants_enforced(self):
        with pytest.raises(ValidationError):
            Network([DenseLayer(np.eye(2), np.zeros(2), "softmax"), DenseLayer(np.eye(2), np.zeros(2), "identity")])
        with pytest.raises(ShapeError):
            Network([DenseLayer(np.ones((3, 2)), np.zeros(3), "relu"), DenseLayer(np.ones((2, 2)), np.zeros(2), "identity")])
        with pytest.raises(ValidationError):
            Network([DenseLayer(np.array([[np.inf]]), np.zeros(1), "identity")])

    def test_sigmoid_extremes_are_finite(self):
        net = Network([DenseLayer(np.array([[1.0]]), np.zeros(1), "sigmoid")])
        out = net(np.array([[-1000.0], [1000.0]]))
        np.testing.assert_array_equal(out, [[0.0], [1.0]])


class TestBackward:
    def test_zero_upstream_gives_zero(self, rng):
        net = dense_network([4, 5, 3], ["sigmoid", "identity"], 1)
        out, cache = network_forward(net, rng.standard_normal((3, 4)))
        g = network_backward(net, cache, np.zeros_like(out))
        for p in g.parameters() + [g.input_gradient]:
            assert not np.any(p)

    def test_identity_passes_gradient(self, rng):
        net = Network([DenseLayer(np.eye(3), np.zeros(3), "identity")])
        out, cache = network_forward(net, rng.standard_normal((2, 3)))
        up = rng.standard_normal((2, 3))
        np.testing.assert_array_equal(network_backward(net, cache, up).input_gradient, up)

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("hidden", ["relu", "sigmoid", "identity"])
    def test_finite_differences(self, seed, hidden):
        r = np.random.default_rng(seed)
        sizes = [int(r.integers(2, 8)), int(r.integers(2, 10)), int(r.integers(2, 10))]
        net = dense_network(sizes, [hidden, "identity"], seed)
        for l in net.layers:
            l.bias = 0.1 * r.standard_normal(l.out_dim)
        x = r.standard_normal((4, sizes[0]))
        while relu_margin(net, x) < 1e-2:
            x = r.standard_normal((4, sizes[0]))
        target = r.standard_normal((4, sizes[-1]))
        assert gradient_check(net, _quadratic(target), x, h=1e-4) <= 1e-4

    def test_softmax_jacobian_path(self, rng):
        net = dense_network([3, 5, 4], ["sigmoid", "softmax"], 2)
        target = rng.random((2, 4))
        assert gradient_check(net, _quadratic(target), rng.standard_normal((2, 3))) <= 1e-4

    def test_stale_cache_rejected(self, rng):
        net = dense_network([2, 2], ["identity"], 0)
        out, cache = network_forward(net, rng.standard_normal((1, 2)))
        g = network_backward(net, cache, np.ones_like(out))
        adagrad_step(net, g, AdaGradState.for_network(net), 0.1)
        with pytest.raises(ContractError):
            network_backward(net, cache, np.ones_like(out))
        other = dense_network([2, 2], ["identity"], 0)
        with pytest.raises(ContractError):
            network_backward(other, network_forward(net, np.ones((1, 2)))[1], np.ones((1, 2)))

    def test_frozen_still_returns_input_gradient(self, rng):
        net = dense_network([3, 4, 2], ["sigmoid", "softmax"], 0).freeze()
        out, cache = network_forward(net, rng.standard_normal((2, 3)))
        g = network_backward(net, cache, np.ones_like(out))
        assert g.input_gradient.shape == (2, 3)
        assert g.weights == []

    def test_relu_derivative_at_zero_is_zero(self):
        net = Network([DenseLayer(np.array([[1.0]]), np.zeros(1), "relu")])
        out, cache = network_forward(net, np.array([[0.0]]))
        assert network_backward(net, cache, np.ones((1, 1))).input_gradient[0, 0] == 0.0


class TestAdaGrad:
    def test_zero_gradient_no_change(self):
        net = dense_network([3, 2], ["identity"], 0)
        before = [p.copy() for p in net.parameters()]
        state = AdaGradState.for_network(net)
        zeros = GradientBundle([np.zeros_like(l.weight) for l in net.layers], [np.zeros_like(l.bias) for l in net.layers])
        adagrad_step(net, zeros, state, 0.1)
        for a, b in zip(before, net.parameters()):
            np.testing.assert_array_equal(a, b)
        assert not any(np.any(a) for a in state.accum_w + state.accum_b)

    def test_first_step_formula(self):
        net = Network([DenseLayer(np.array([[1.0]]), np.zeros(1), "identity")])
        state = AdaGradState.for_network(net, eps=1e-8)
        g = GradientBundle([np.array([[2.0]])], [np.zeros(1)])
        adagrad_step(net, g, state, 0.1)
        assert state.accum_w[0][0, 0] == 4.0
        assert net.layers[0].weight[0, 0] == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8), abs=1e-15)

    def test_repeated_gradient_damps_step(self):
        net = Network([DenseLayer(np.array([[1.0]]), np.zeros(1), "identity")])
        state = AdaGradState.for_network(net)
        g = GradientBundle([np.array([[0.7]])], [np.zeros(1)])
        w0 = net.layers[0].weight[0, 0]
        adagrad_step(net, g, state, 0.1)
        w1 = net.layers[0].weight[0, 0]
        adagrad_step(net, g, state, 0.1)
        w2 = net.layers[0].weight[0, 0]
        assert abs(w2 - w1) < abs(w1 - w0)

    def test_frozen_refused(self):
        net = dense_network([2, 2], ["identity"], 0).freeze()
        g = GradientBundle([np.zeros((2, 2))], [np.zeros(2)])
        with pytest.raises(ContractError):
            adagrad_step(net, g, AdaGradState.for_network(net), 0.1)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (5, 3, 2), elements=st.floats(-10, 10)))
    def test_accumulators_non_decreasing(self, grads):
        net = dense_network([2, 3], ["identity"], 0)
        state = AdaGradState.for_network(net)
        prev = state.accum_w[0].copy()
        for g in grads:
            adagrad_step(net, GradientBundle([g], [np.zeros(3)]), state, 0.1)
            assert np.all(state.accum_w[0] >= prev)
            prev = state.accum_w[0].copy()


class TestGradientCheck:
    def test_linear_quadratic_is_tight(self, rng):
        net = dense_network([4, 3], ["identity"], 5)
        assert gradient_check(net, _quadratic(rng.standard_normal((3, 3))), rng.standard_normal((3, 4))) <= 1e-6

    def test_sigmoid_sce_78_16_8(self, rng):
        from v2s_lab.corpus import one_hot
        from v2s_lab.losses import sce_loss

        net = dense_network([78, 16, 8], ["sigmoid", "softmax"], 11)
        code = one_hot(3, 8)
        x = rng.standard_normal((3, 78))
        assert gradient_check(net, lambda out: sce_loss(code, out), x) <= 1e-4

    def test_catches_corrupted_gradient(self, rng):
        net = dense_network([3, 4, 2], ["sigmoid", "identity"], 4)
        loss = _quadratic(rng.standard_normal((2, 2)))
        x = rng.standard_normal((2, 3))
        bundle = analytic_gradients(net, loss, x)
        bundle.weights[0][1, 2] *= 2.0
        assert gradient_check(net, loss, x, analytic=bundle) > 0.1

    def test_rejects_non_finite_loss(self):
        net = dense_network([1, 1], ["identity"], 0)

        def loss(out):
            return float("inf") if out[0, 0] > 0.5 else 0.0, np.zeros_like(out)

        with pytest.raises(ValidationError):
            gradient_check(net, loss, np.array([[1e6]]))

    def test_rejects_bad_step(self):
        net = dense_network([1, 1], ["identity"], 0)
        with pytest.raises(ValidationError):
            gradient_check(net, _quadratic(np.zeros((1, 1))), np.ones((1, 1)), h=0.0)


class TestFolding:
    def test_input_fold_matches_normalised_forward(self, rng):
        net = dense_network([4, 6, 3], ["sigmoid", "softmax"], 0)
        shift, scale = rng.standard_normal(4), rng.uniform(0.5, 2.0, 4)
        x = rng.standard_normal((5, 4))
        np.testing.assert_allclose(fold_input_affine(net, shift, scale)(x), net((x - shift) / scale), rtol=1e-12)

    def test_output_fold(self, rng):
        net = dense_network([3, 5, 3], ["relu", "identity"], 0)
        shift, scale = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)
        x = rng.standard_normal((4, 3))
        np.testing.assert_allclose(fold_output_affine(net, shift, scale)(x), net(x) * scale + shift, rtol=1e-12)

    def test_output_fold_needs_identity_head(self):
        with pytest.raises(ContractError):
            fold_output_affine(dense_network([2, 2], ["softmax"], 0), np.zeros(2), np.ones(2))
