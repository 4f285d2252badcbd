import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import central_diff, rel_err
from neurallinear.errors import DimensionMismatch
from neurallinear.mlp import AdamState, MlpParams, adam_step, forward_features, forward_output, grad, init_params


def tiny(w, b, w_out=1.0, b_out=0.0):
    return MlpParams([np.array([[w]]), np.array([[w_out]])], [np.array([b]), np.array([b_out])])


class TestForward:
    def test_zero_params_give_bias_column_only(self, rng):
        p = init_params([3, 4, 1], 0)
        p = p.unflatten(np.zeros(p.size))
        phi = forward_features(p, rng.normal(size=(5, 3)))
        np.testing.assert_array_equal(phi[:, :-1], 0.0)
        np.testing.assert_array_equal(phi[:, -1], 1.0)

    def test_relu_clips(self):
        p = tiny(1.0, 0.0)
        np.testing.assert_array_equal(forward_features(p, np.array([[-2.0], [3.0]])), [[0.0, 1.0], [3.0, 1.0]])

    def test_batch_consistency(self, rng):
        p = init_params([2, 6, 6, 1], 1)
        x = rng.normal(size=(7, 2))
        rows = np.vstack([forward_features(p, x[i : i + 1]) for i in range(7)])
        np.testing.assert_allclose(forward_features(p, x), rows, rtol=1e-15)

    def test_constant_output(self, rng):
        p = init_params([2, 3, 1], 0)
        p = p.unflatten(np.zeros(p.size))
        p.biases[-1][0] = 0.7
        np.testing.assert_array_equal(forward_output(p, rng.normal(size=(4, 2))), 0.7)

    def test_identity_net(self):
        assert forward_output(tiny(1.0, 0.0), np.array([[2.0]]))[0] == 2.0

    def test_output_matches_features(self, rng):
        p = init_params([3, 5, 1], 2)
        x = rng.normal(size=(6, 3))
        phi = forward_features(p, x)
        expected = phi[:, :-1] @ p.weights[-1][:, 0] + p.biases[-1][0]
        np.testing.assert_allclose(forward_output(p, x), expected, rtol=1e-14)

    def test_wrong_width(self):
        with pytest.raises(DimensionMismatch):
            forward_features(init_params([3, 4, 1], 0), np.ones((2, 2)))

    def test_bias_column_exact(self, rng):
        p = init_params([2, 50, 1], 3)
        assert np.all(forward_features(p, 100 * rng.normal(size=(9, 2)))[:, -1] == 1.0)


class TestGrad:
    def test_zero_upstream(self, rng):
        p = init_params([2, 4, 1], 0)
        g = grad(p, rng.normal(size=(3, 2)), np.zeros(3))
        assert np.all(g.flatten() == 0.0)

    def test_linear_chain_rule(self):
        # single hidden unit with positive pre-activation: output = w_out * (w * x + b) + b_out
        p = tiny(1.0, 0.0)
        g = grad(p, np.array([[3.0]]), np.array([1.0]))
        assert g.weights[0][0, 0] == 3.0
        assert g.biases[0][0] == 1.0
        assert g.weights[1][0, 0] == 3.0
        assert g.biases[1][0] == 1.0

    def test_relu_derivative_at_zero_is_zero(self):
        p = tiny(1.0, 0.0)
        g = grad(p, np.array([[0.0]]), np.array([1.0]))
        assert g.weights[0][0, 0] == 0.0 and g.biases[0][0] == 0.0

    def test_upstream_shape_checked(self, rng):
        p = init_params([2, 4, 1], 0)
        with pytest.raises(DimensionMismatch):
            grad(p, rng.normal(size=(3, 2)), np.zeros((3, 2)), wrt="features")

    @given(st.integers(0, 10_000), st.integers(1, 2), st.integers(1, 10), st.integers(1, 8))
    def test_output_grad_finite_differences(self, seed, depth, width, batch):
        r = np.random.default_rng(seed)
        p = init_params([3, *([width] * depth), 1], r)
        p = p.unflatten(p.flatten() + 0.1 * r.normal(size=p.size))
        x = r.normal(size=(batch, 3))
        c = r.normal(size=batch)
        g = grad(p, x, c).flatten()
        num = central_diff(lambda v: c @ forward_output(p.unflatten(v), x), p.flatten(), 1e-5)
        big = np.abs(p.flatten()) > 1e-3
        assert rel_err(g[big], num[big]) <= 1e-6

    def test_feature_grad_finite_differences(self, rng):
        p = init_params([2, 6, 5, 1], 4)
        x = rng.normal(size=(7, 2))
        c = rng.normal(size=(7, p.n_features))
        g = grad(p, x, c, wrt="features")
        num = central_diff(lambda v: np.sum(c * forward_features(p.unflatten(v), x)), p.flatten(), 1e-5)
        assert rel_err(g.flatten(), num) <= 1e-6
        np.testing.assert_array_equal(g.weights[-1], 0.0)


class TestAdam:
    def test_zero_gradient(self):
        p = np.array([1.0, -2.0])
        new, st_ = adam_step(AdamState(lr=0.1), p, np.zeros(2))
        np.testing.assert_array_equal(new, p)
        assert st_.t == 1

    def test_first_step_magnitude(self):
        new, _ = adam_step(AdamState(lr=0.01), np.zeros(2), np.array([3.0, -0.5]))
        np.testing.assert_allclose(new, [-0.01, 0.01], rtol=1e-6)

    def test_monotone_under_constant_gradient(self):
        s = AdamState(lr=0.01)
        p = np.zeros(1)
        trail = []
        for _ in range(2):
            p, s = adam_step(s, p, np.array([2.0]))
            trail.append(p[0])
        assert 0 > trail[0] > trail[1]

    def test_structured_params(self):
        p = init_params([2, 3, 1], 0)
        new, _ = adam_step(AdamState(lr=1e-3), p, grad(p, np.ones((1, 2)), np.ones(1)))
        assert isinstance(new, MlpParams)
        assert new.layer_sizes == p.layer_sizes


class TestInit:
    def test_deterministic(self):
        a, b = init_params([2, 50, 1], 7), init_params([2, 50, 1], 7)
        assert a.flatten().tobytes() == b.flatten().tobytes()

    def test_counts(self):
        p = init_params([2, 50, 1], 0)
        assert [W.size for W in p.weights] == [100, 50]
        assert [b.size for b in p.biases] == [50, 1]

    def test_weight_scale(self):
        p = init_params([25, 400, 1], 0)
        assert abs(p.weights[0].std() - 1 / 5) < 0.1 / 5

    def test_json_round_trip(self):
        p = init_params([2, 3, 3, 1], 1)
        q = MlpParams.from_json(p.to_json())
        assert q.flatten().tobytes() == p.flatten().tobytes()
