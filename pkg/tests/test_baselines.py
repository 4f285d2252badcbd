import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from helpers import central_diff, rel_err
from neurallinear import baselines as bs
from neurallinear.data import Standardizer, toy_dataset
from neurallinear.mlp import forward_features, forward_output, init_params
from neurallinear.slicesample import mixture_predict
from neurallinear.training import TrainingData


def toy_train(seed):
    train, _ = toy_dataset(seed)
    s = Standardizer.fit(train.x, train.y)
    return TrainingData(s.apply_x(train.x), s.apply_y(train.y))


def random_mfvi(rng, sizes, log_std_scale=1.0):
    p = bs.mfvi_init(sizes, rng)
    log_std = p.log_std.unflatten(rng.normal(-1.5, log_std_scale, size=p.mean.size))
    return bs.MfviParams(p.mean, log_std, float(rng.normal(-1.0, 0.3)))


class TestKl:
    def test_zero_at_prior(self):
        assert bs.kl_gauss_diag(np.zeros(7), np.ones(7)) == 0.0

    def test_unit_mean_shift(self):
        assert bs.kl_gauss_diag([1.0], [1.0]) == pytest.approx(0.5)

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            bs.kl_gauss_diag([0.0], [0.0])

    @given(
        arrays(float, 6, elements=st.floats(-10, 10)),
        arrays(float, 6, elements=st.floats(1e-4, 1e2)),
    )
    def test_nonnegative(self, mu, s2):
        assert bs.kl_gauss_diag(mu, s2) >= 0.0


class TestMfvi:
    def test_zero_steps_keeps_init(self):
        data = toy_train(0)
        params, trace = bs.mfvi_train(data, seed=3, steps=0)
        init = bs.mfvi_init([1, 50, 1], np.random.default_rng(3))
        np.testing.assert_array_equal(params.mean.flatten(), init.mean.flatten())
        np.testing.assert_array_equal(params.log_std.flatten(), -5.0)
        assert params.log_sigma2 == -3.0
        assert trace.size == 0

    def test_round_trip_flatten(self, rng):
        p = random_mfvi(rng, [2, 3, 1])
        q = p.unflatten(p.flatten())
        np.testing.assert_array_equal(q.flatten(), p.flatten())

    @pytest.mark.parametrize("seed", range(10))
    def test_elbo_gradient_one_hidden_unit(self, seed):
        rng = np.random.default_rng(seed)
        p = random_mfvi(rng, [2, 1, 1], 0.5)
        p.mean.biases[0][:] = 1.0  # keep the unit active so the check is not trivially zero
        x = rng.normal(size=(6, 2))
        y = rng.normal(size=6)
        eps = bs.mfvi_noise(p, 6, 4, rng)
        vec = p.flatten()
        _, g = bs.mfvi_elbo(p, x, y, 30, eps)
        num = central_diff(lambda v: bs.mfvi_elbo(p.unflatten(v), x, y, 30, eps)[0], vec)
        assert rel_err(g, num) < 1e-4

    def test_elbo_gradient_wider_net(self, rng):
        p = random_mfvi(rng, [3, 4, 4, 1], 0.5)
        x = rng.normal(size=(5, 3))
        y = rng.normal(size=5)
        eps = bs.mfvi_noise(p, 5, 3, rng)
        _, g = bs.mfvi_elbo(p, x, y, 20, eps)
        num = central_diff(lambda v: bs.mfvi_elbo(p.unflatten(v), x, y, 20, eps)[0], p.flatten())
        assert rel_err(g, num) < 1e-4

    def test_local_reparameterization_moments(self, rng):
        # Exact moments of h @ W + b under weight-space sampling, written out elementwise.
        d, k, draws = 4, 3, 10_000
        h = np.abs(rng.normal(size=d))
        mean_w, mean_b = rng.normal(size=(d, k)), rng.normal(size=k)
        lw, lb = rng.normal(-1.0, 0.3, size=(d, k)), rng.normal(-1.0, 0.3, size=k)
        exact_mean = np.array([sum(h[i] * mean_w[i, j] for i in range(d)) + mean_b[j] for j in range(k)])
        exact_var = np.array(
            [sum(h[i] ** 2 * math.exp(2 * lw[i, j]) for i in range(d)) + math.exp(2 * lb[j]) for j in range(k)]
        )
        mu, nu = bs.preactivation_moments(h[None, :], mean_w, mean_b, lw, lb)
        local = mu + np.sqrt(nu) * rng.standard_normal((draws, k))
        w = mean_w + np.exp(lw) * rng.standard_normal((draws, d, k))
        weight_space = np.einsum("d,ndk->nk", h, w) + mean_b + np.exp(lb) * rng.standard_normal((draws, k))
        np.testing.assert_allclose(nu[0], exact_var, rtol=1e-12)
        for sample in (local, weight_space):
            np.testing.assert_allclose(sample.mean(0), exact_mean, rtol=0.02)
            # the variance of a 10^4-draw variance estimate is about 1.4% relative, so
            # compare on the standard deviation scale at 2% and the variance at five standard errors
            np.testing.assert_allclose(sample.std(0), np.sqrt(exact_var), rtol=0.02)
            np.testing.assert_allclose(sample.var(0), exact_var, rtol=5 * math.sqrt(2 / draws))

    def test_training_raises_elbo(self):
        wins = 0
        for seed in range(20):
            data = toy_train(seed)
            init = bs.mfvi_init([1, 50, 1], np.random.default_rng(seed))
            params, _ = bs.mfvi_train(data, seed=seed, steps=400)
            eps_rng = np.random.default_rng(1000 + seed)
            eps = bs.mfvi_noise(init, data.n, 10, eps_rng)
            before = bs.mfvi_elbo(init, data.x, data.y, data.n, eps)[0]
            after = bs.mfvi_elbo(params, data.x, data.y, data.n, eps)[0]
            wins += after > before
        assert wins > 10

    def test_predict_component_count(self, rng):
        p = random_mfvi(rng, [1, 5, 1])
        mix = bs.mfvi_predict(p, rng.normal(size=(4, 1)), seed=0)
        assert mix.n_components == 100
        assert mix.loc.shape == (100, 4)

    def test_clamped_stds_give_identical_components(self, rng):
        p = random_mfvi(rng, [1, 5, 1])
        p = bs.MfviParams(p.mean, p.log_std.unflatten(np.full(p.mean.size, -1e6)), p.log_sigma2)
        x = rng.normal(size=(3, 1))
        mix = bs.mfvi_predict(p, x, seed=0)
        np.testing.assert_allclose(mix.loc, np.broadcast_to(forward_output(p.mean, x), (100, 3)), atol=1e-6)
        np.testing.assert_array_equal(mix.scale, math.exp(p.log_sigma2))

    def test_linear_model_mixture_mean(self):
        p = bs.mfvi_init([1, 1], 0)
        p.mean.weights[0][:] = 1.5
        p.mean.biases[0][:] = -0.5
        p.log_std.weights[0][:] = math.log(0.4)
        p.log_std.biases[0][:] = math.log(0.2)
        x = np.array([[2.0]])
        mix = bs.mfvi_predict(p, x, seed=11)
        _, mean, _ = mixture_predict(mix, np.zeros(1))
        analytic = 1.5 * 2.0 - 0.5
        se = math.sqrt(0.4**2 * 4.0 + 0.2**2) / math.sqrt(100)
        assert abs(mean[0] - analytic) < 3 * se


class TestMcd:
    def test_weight_decay_mapping(self):
        assert bs.mcd_weight_decay(0.05, 1000) == pytest.approx(0.000475)

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
    def test_invalid_rate(self, p):
        with pytest.raises(ValueError):
            bs.McdParams(init_params([1, 2, 1], 0), dropout_p=p)

    def test_zero_rate_is_deterministic(self, rng):
        net = init_params([2, 8, 1], 0)
        x = rng.normal(size=(5, 2))
        mix = bs.mcd_predict(bs.McdParams(net, dropout_p=0.0), x, seed=0)
        assert mix.n_components == 100
        np.testing.assert_array_equal(mix.loc, np.broadcast_to(forward_output(net, x), (100, 5)))

    def test_mask_expectation(self, rng):
        p = 0.05
        net = init_params([2, 10, 1], 0)
        x = rng.normal(size=(1, 2))
        act = forward_features(net, x)[0, :-1]
        masks = bs.dropout_masks(net, 10_000, p, rng)[0]
        avg = (masks * act).mean(axis=0)
        on = act > 1e-8
        np.testing.assert_allclose(avg[on], (1 - p) * act[on], rtol=0.02)

    def test_masks_are_unscaled_binary(self, rng):
        masks = bs.dropout_masks(init_params([1, 6, 6, 1], 0), 50, 0.3, rng)
        assert len(masks) == 2
        for m in masks:
            assert set(np.unique(m)) <= {0.0, 1.0}

    def test_training_fits_better_than_init(self):
        data = toy_train(0)
        init = init_params([1, 50, 1], np.random.default_rng(0))
        trained = bs.mcd_train(data, seed=0, steps=600)
        assert trained.weight_decay == pytest.approx(bs.mcd_weight_decay(0.05, data.n))

        def mse(net):
            return np.mean((forward_output(net, data.x) - data.y) ** 2)

        assert mse(trained.params) < mse(init)

    def test_predict_accepts_vector_input(self):
        net = bs.McdParams(init_params([1, 4, 1], 0))
        assert bs.mcd_predict(net, np.linspace(-1, 1, 7), seed=0).loc.shape == (100, 7)
