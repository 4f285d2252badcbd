"""Mean-field variational inference and MC dropout regression baselines."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteObjective
from .mlp import AdamState, MlpParams, adam_step, forward_output, grad, init_params
from .slicesample import gaussian_mixture

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_INIT = -5.0
LOG_STD_MIN = -20.0
LOG_SIGMA2_INIT = -3.0


def kl_gauss_diag(mu, sigma2):
    """KL from ``N(mu, diag(sigma2))`` to ``N(0, I)``."""
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    return float(0.5 * np.sum(mu**2 + sigma2 - 1.0 - np.log(sigma2)))


def steps_to_epochs(n, steps=25000, batch_size=32):
    return math.ceil(steps / math.ceil(n / batch_size))


@dataclass
class MfviParams:
    mean: MlpParams
    log_std: MlpParams
    log_sigma2: float

    def flatten(self):
        return np.concatenate([self.mean.flatten(), self.log_std.flatten(), [self.log_sigma2]])

    def unflatten(self, vec):
        k = self.mean.size
        return MfviParams(self.mean.unflatten(vec[:k]), self.log_std.unflatten(vec[k : 2 * k]), float(vec[-1]))


def mfvi_init(layer_sizes, seed):
    mean = init_params(layer_sizes, seed)
    log_std = mean.unflatten(np.full(mean.size, LOG_STD_INIT))
    return MfviParams(mean, log_std, LOG_SIGMA2_INIT)


def mfvi_noise(params, n_points, n_samples, rng):
    """Standard normal draws for every sampled pre-activation, one array per layer."""
    return [rng.standard_normal((n_samples, n_points, W.shape[1])) for W in params.mean.weights]


def preactivation_moments(h, mean_w, mean_b, log_std_w, log_std_b):
    """Mean and variance of ``h @ W + b`` under independent Gaussian weights."""
    mu = h @ mean_w + mean_b
    nu = (h * h) @ np.exp(2.0 * log_std_w) + np.exp(2.0 * log_std_b)
    return mu, nu


def mfvi_elbo(params, x, y, n_total, eps):
    """Minibatch ELBO estimate and its gradient w.r.t. the flat parameter vector.

    Pre-activations are sampled directly (local reparameterization) from the
    supplied standard normal draws ``eps``. The likelihood is rescaled by
    ``n_total / batch`` and the KL term enters unscaled, so the value is an
    unbiased estimate of the full-data ELBO.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    b = x.shape[0]
    n_samples = eps[0].shape[0]
    s2 = math.exp(params.log_sigma2)
    n_layers = len(params.mean.weights)

    h = np.broadcast_to(x, (n_samples, b, x.shape[1]))
    cache = []
    for layer in range(n_layers):
        mu, nu = preactivation_moments(
            h, params.mean.weights[layer], params.mean.biases[layer],
            params.log_std.weights[layer], params.log_std.biases[layer],
        )
        sd = np.sqrt(nu)
        z = mu + sd * eps[layer]
        cache.append((h, sd))
        h = np.maximum(z, 0.0) if layer < n_layers - 1 else z
    f = h[..., 0]
    resid = y - f
    scale = n_total / b
    loglik = scale * np.mean(np.sum(-0.5 * (LOG_2PI + params.log_sigma2) - 0.5 * resid**2 / s2, axis=1))

    g_mean = MlpParams([None] * n_layers, [None] * n_layers)
    g_lstd = MlpParams([None] * n_layers, [None] * n_layers)
    dz = (scale / n_samples) * (resid / s2)[..., None]
    for layer in range(n_layers - 1, -1, -1):
        h_in, sd = cache[layer]
        M = params.mean.weights[layer]
        var_w = np.exp(2.0 * params.log_std.weights[layer])
        var_b = np.exp(2.0 * params.log_std.biases[layer])
        dnu = dz * eps[layer] / (2.0 * sd)
        g_mean.weights[layer] = np.einsum("sbi,sbo->io", h_in, dz)
        g_mean.biases[layer] = dz.sum(axis=(0, 1))
        g_lstd.weights[layer] = np.einsum("sbi,sbo->io", h_in * h_in, dnu) * 2.0 * var_w
        g_lstd.biases[layer] = dnu.sum(axis=(0, 1)) * 2.0 * var_b
        if layer > 0:
            dh = dz @ M.T + 2.0 * h_in * (dnu @ var_w.T)
            dz = dh * (h_in > 0.0)
    g_ls2 = scale * np.mean(np.sum(-0.5 + 0.5 * resid**2 / s2, axis=1))

    mu_flat = params.mean.flatten()
    lstd_flat = params.log_std.flatten()
    var_flat = np.exp(2.0 * lstd_flat)
    kl = kl_gauss_diag(mu_flat, var_flat)
    g = np.concatenate([g_mean.flatten() - mu_flat, g_lstd.flatten() - (var_flat - 1.0), [g_ls2]])
    return float(loglik - kl), g


def mfvi_train(data, seed, hidden=(50,), steps=25000, batch_size=32, lr=1e-3, n_samples=10):
    """ADAM on the negative ELBO; each minibatch step uses ``n_samples`` noise draws."""
    rng = np.random.default_rng(seed)
    x, y = data.x, data.y
    n = x.shape[0]
    params = mfvi_init([x.shape[1], *hidden, 1], rng)
    vec = params.flatten()
    state = AdamState(lr=lr)
    epochs = steps_to_epochs(n, steps, batch_size) if steps > 0 else 0
    trace = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            p = params.unflatten(vec)
            eps = mfvi_noise(p, len(idx), n_samples, rng)
            elbo, g = mfvi_elbo(p, x[idx], y[idx], n, eps)
            if not np.isfinite(elbo):
                raise NonFiniteObjective(f"ELBO is {elbo} at epoch {epoch}", step=epoch)
            vec, state = adam_step(state, vec, -g / n)
            vec[params.mean.size : 2 * params.mean.size] = np.maximum(
                vec[params.mean.size : 2 * params.mean.size], LOG_STD_MIN
            )
        trace.append(elbo)
    return params.unflatten(vec), np.array(trace)


def mfvi_predict(params, x, n_samples=100, seed=None):
    """Gaussian mixture over ``n_samples`` joint weight draws."""
    rng = np.random.default_rng(seed)
    s2 = math.exp(params.log_sigma2)
    mean = params.mean.flatten()
    std = np.exp(np.maximum(params.log_std.flatten(), LOG_STD_MIN))
    outs = np.array(
        [forward_output(params.mean.unflatten(mean + std * rng.standard_normal(mean.size)), x) for _ in range(n_samples)]
    )
    return gaussian_mixture(outs, np.full_like(outs, s2))


@dataclass
class McdParams:
    params: MlpParams
    dropout_p: float = 0.05
    weight_decay: float = 0.0
    log_sigma2: float = LOG_SIGMA2_INIT

    def __post_init__(self):
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.dropout_p}")


def mcd_weight_decay(p, n):
    """L2 coefficient matching a unit-variance Gaussian prior under keep rate ``1 - p``."""
    return (1.0 - p) / (2.0 * n)


def dropout_masks(params, n_points, p, rng):
    """Bernoulli keep masks (probability ``1 - p``) on hidden unit outputs, unscaled."""
    return [(rng.random((n_points, W.shape[1])) >= p).astype(float) for W in params.weights[:-1]]


def mcd_train(data, seed, hidden=(50,), p=0.05, steps=25000, batch_size=32, lr=1e-3):
    """ADAM on the mean Gaussian NLL plus weight decay, with fresh masks each step."""
    rng = np.random.default_rng(seed)
    x, y = data.x, data.y
    n = x.shape[0]
    params = init_params([x.shape[1], *hidden, 1], rng)
    wd = mcd_weight_decay(p, n)
    k = params.size
    vec = np.concatenate([params.flatten(), [LOG_SIGMA2_INIT]])
    state = AdamState(lr=lr)
    epochs = steps_to_epochs(n, steps, batch_size) if steps > 0 else 0
    for epoch in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            theta = vec[:k]
            net = params.unflatten(theta)
            s2 = math.exp(vec[-1])
            masks = dropout_masks(net, len(idx), p, rng)
            resid = y[idx] - forward_output(net, x[idx], masks)
            loss = np.mean(0.5 * (LOG_2PI + vec[-1]) + 0.5 * resid**2 / s2) + wd * theta @ theta
            if not np.isfinite(loss):
                raise NonFiniteObjective(f"MC dropout loss is {loss} at epoch {epoch}", step=epoch)
            g_theta = grad(net, x[idx], -resid / (s2 * len(idx)), "output", masks).flatten() + 2.0 * wd * theta
            g_noise = np.mean(0.5 - 0.5 * resid**2 / s2)
            vec, state = adam_step(state, vec, np.concatenate([g_theta, [g_noise]]))
    return McdParams(params.unflatten(vec[:k]), p, wd, float(vec[-1]))


def mcd_predict(params, x, n_samples=100, seed=None):
    """Gaussian mixture over ``n_samples`` stochastic forward passes."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if params.params.layer_sizes[0] == 1 else x.reshape(1, -1)
    n = x.shape[0]
    s2 = math.exp(params.log_sigma2)
    outs = np.array(
        [
            forward_output(params.params, x, dropout_masks(params.params, n, params.dropout_p, rng))
            for _ in range(n_samples)
        ]
    )
    return gaussian_mixture(outs, np.full_like(outs, s2))
