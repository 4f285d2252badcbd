"""Training procedures for the MAP baseline and the neural linear variants.

All hyperparameters that must stay positive (noise variance, prior
variances, a0, b0) are optimized as logarithms.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import bayes_linear as bl
from .errors import ConfigError, NonFiniteObjective, NotPositiveDefinite
from .mlp import AdamState, adam_step, forward_features, forward_output, grad, init_params

LOG_2PI = math.log(2.0 * math.pi)
HEAD_FLOOR = 1e-3
MAP_MIN_STEPS = 10000


def gamma_from_log_prior_var(log_var):
    """L2 coefficient equivalent to a zero-mean Gaussian prior with variance ``exp(log_var)``."""
    return 0.5 * math.exp(-log_var)


def max_map_epochs(n, batch_size=32, min_steps=MAP_MIN_STEPS):
    """Epochs needed for at least ``min_steps`` minibatch updates."""
    return math.ceil(min_steps / math.ceil(n / batch_size))


@dataclass
class TrainingData:
    """Standardized training inputs/targets with an optional validation part."""

    x: np.ndarray
    y: np.ndarray
    x_val: np.ndarray = None
    y_val: np.ndarray = None

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def has_validation(self):
        return self.x_val is not None and len(self.x_val) > 0


@dataclass
class MapConfig:
    gamma: float = 0.5
    lr_weights: float = 1e-3
    lr_noise: float = 1e-3
    epochs: int = None  # None: enough epochs for 10000 steps
    batch_size: int = 32
    hidden: tuple = (50,)
    log_sigma2_init: float = -3.0


@dataclass
class RegConfig:
    gamma_w: float = 0.5
    gamma_b: float = 0.5
    lr_theta: float = 1e-3
    lr_sigma: float = 1e-3
    epochs: int = 5000
    hidden: tuple = (50,)
    alpha_w_init: float = 1.0 / 50
    alpha_b_init: float = 1.0
    log_sigma2_init: float = -3.0


@dataclass
class BnConfig:
    lr: float = 1e-3
    max_epochs: int = 5000
    prior: bl.NigPrior = field(default_factory=lambda: bl.NigPrior(1.0, 1.0, 1.0, 1.0))
    optimize_prior: bool = True
    early_stopping: bool = True
    hidden: tuple = (50,)


_JSON_FIELDS = {
    "MapConfig": ("gamma", "lr_weights", "lr_noise", "epochs", "batch_size"),
    "RegConfig": ("gamma_w", "gamma_b", "lr_theta", "lr_sigma", "epochs"),
    "BnConfig": ("lr", "max_epochs", "optimize_prior"),
}


def config_to_json(config):
    """Flat JSON object for a training config; BN priors are inlined as a0, b0, alpha_w, alpha_b."""
    out = {k: getattr(config, k) for k in _JSON_FIELDS[type(config).__name__]}
    if isinstance(config, BnConfig):
        p = config.prior
        out.update(a0=p.a0, b0=p.b0, alpha_w=p.alpha_w, alpha_b=p.alpha_b)
    return out


def config_from_json(cls, obj):
    known = set(_JSON_FIELDS[cls.__name__])
    if cls is BnConfig:
        known |= {"a0", "b0", "alpha_w", "alpha_b"}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {k: v for k, v in obj.items() if k in _JSON_FIELDS[cls.__name__]}
    if cls is BnConfig:
        d = bl.NigPrior(1.0, 1.0, 1.0, 1.0)
        kwargs["prior"] = bl.NigPrior(
            float(obj.get("alpha_w", d.alpha_w)), float(obj.get("alpha_b", d.alpha_b)),
            float(obj.get("a0", d.a0)), float(obj.get("b0", d.b0)),
        )
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class TrainedModel:
    params: object
    head: object  # GaussianPrior or NigPrior
    kind: str  # "map" or "reg" or "bn"
    train_trace: np.ndarray = None
    val_ll: float = float("nan")
    best_epoch: int = None
    epochs_run: int = 0
    val_trace: np.ndarray = None

    @property
    def sigma2(self):
        return getattr(self.head, "sigma2", None)


def _layer_sizes(d, hidden):
    return [d, *hidden, 1]


def _gaussian_ll(y, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (y - mean) ** 2 / var)


def map_val_ll(params, sigma2, x, y):
    return float(np.mean(_gaussian_ll(y, forward_output(params, x), sigma2)))


def train_map(data, config, seed):
    """Minibatch ADAM on the L2-regularized Gaussian log likelihood of the full network.

    The minibatch objective rescales the batch log likelihood by ``N / B`` so
    it is an unbiased estimate of the full-data objective.
    """
    rng = np.random.default_rng(seed)
    n = data.n
    params = init_params(_layer_sizes(data.x.shape[1], config.hidden), rng)
    epochs = max_map_epochs(n, config.batch_size) if config.epochs is None else int(config.epochs)
    n_theta = params.size
    vec = np.concatenate([params.flatten(), [config.log_sigma2_init]])
    lr = np.concatenate([np.full(n_theta, config.lr_weights), [config.lr_noise]])
    state = AdamState(lr=lr)
    trace = []
    for epoch in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            theta = vec[:n_theta]
            p = params.unflatten(theta)
            s2 = math.exp(vec[-1])
            xb, yb = data.x[idx], data.y[idx]
            f = forward_output(p, xb)
            resid = yb - f
            b = len(idx)
            loglik = n / b * np.sum(-0.5 * (LOG_2PI + vec[-1]) - 0.5 * resid**2 / s2)
            loss = (-loglik + config.gamma * theta @ theta) / n
            if not np.isfinite(loss):
                raise NonFiniteObjective(f"MAP loss is {loss} at epoch {epoch}", step=epoch)
            g_theta = grad(p, xb, -resid / (s2 * b), wrt="output").flatten() + 2.0 * config.gamma * theta / n
            g_noise = -np.sum(-0.5 + 0.5 * resid**2 / s2) / b
            vec, state = adam_step(state, vec, np.concatenate([g_theta, [g_noise]]))
        trace.append(loss)
    params = params.unflatten(vec[:n_theta])
    sigma2 = math.exp(vec[-1])
    if not np.isfinite(sigma2) or not np.all(np.isfinite(vec)):
        raise NonFiniteObjective("MAP parameters diverged")
    val = map_val_ll(params, sigma2, data.x_val, data.y_val) if data.has_validation else float("nan")
    head = bl.GaussianPrior(1.0 / 50, 1.0, sigma2)
    return TrainedModel(params, head, "map", np.array(trace), val, None, epochs)


class _FeatureObjective:
    """Packs the feature-network parameters and log hyperparameters into one flat vector."""

    def __init__(self, params, x, y):
        self.params = params
        self.x = x
        self.y = y
        self.fmask = params.feature_mask()
        self.full = params.flatten()
        self.n_theta = int(self.fmask.sum())

    def network(self, vec):
        f = self.full.copy()
        f[self.fmask] = vec[: self.n_theta]
        return self.params.unflatten(f)

    def feature_grad(self, net, d_phi):
        return grad(net, self.x, d_phi, wrt="features").flatten()[self.fmask]


class RegObjective(_FeatureObjective):
    """Per-point negative of the evidence minus L2 penalties.

    Vector layout: feature parameters, then log alpha_w, log alpha_b, log sigma2.
    """

    def __init__(self, params, x, y, gamma_w, gamma_b):
        super().__init__(params, x, y)
        self.gamma = np.where(params.weight_mask()[self.fmask], gamma_w, gamma_b)

    def unpack(self, vec):
        return self.network(vec), bl.GaussianPrior(*np.exp(vec[self.n_theta :]))

    def __call__(self, vec):
        """``(loss, gradient, posterior)`` at ``vec``."""
        net, prior = self.unpack(vec)
        theta = vec[: self.n_theta]
        value, g, post = bl.blr_evidence_full(forward_features(net, self.x), self.y, prior)
        n = len(self.y)
        loss = (-value + np.sum(self.gamma * theta**2)) / n
        g_theta = -self.feature_grad(net, g["phi"]) + 2.0 * self.gamma * theta
        g_hyp = -np.array([g["log_alpha_w"], g["log_alpha_b"], g["log_sigma2"]])
        return loss, np.concatenate([g_theta, g_hyp]) / n, post


class BnObjective(_FeatureObjective):
    """Per-point negative normal-inverse-gamma evidence.

    Vector layout: feature parameters, then (if the prior is learned)
    log alpha_w, log alpha_b, log a0, log b0.
    """

    def __init__(self, params, x, y, prior, optimize_prior):
        super().__init__(params, x, y)
        self.prior = prior
        self.optimize_prior = optimize_prior

    def unpack(self, vec):
        prior = bl.NigPrior(*np.exp(vec[self.n_theta :])) if self.optimize_prior else self.prior
        return self.network(vec), prior

    def initial(self):
        theta = self.full[self.fmask]
        if not self.optimize_prior:
            return theta.copy()
        p = self.prior
        return np.concatenate([theta, np.log([p.alpha_w, p.alpha_b, p.a0, p.b0])])

    def __call__(self, vec):
        net, prior = self.unpack(vec)
        value, g, post = bl.nig_evidence_full(forward_features(net, self.x), self.y, prior)
        n = len(self.y)
        g_all = -self.feature_grad(net, g["phi"])
        if self.optimize_prior:
            g_hyp = -np.array([g["log_alpha_w"], g["log_alpha_b"], g["log_a0"], g["log_b0"]])
            g_all = np.concatenate([g_all, g_hyp])
        return -value / n, g_all / n, post


def _checked(objective, vec, epoch):
    try:
        loss, g, post = objective(vec)
    except (NotPositiveDefinite, ValueError) as exc:
        raise NonFiniteObjective(f"evidence failed at epoch {epoch}: {exc}", step=epoch) from exc
    if not np.isfinite(loss) or not np.all(np.isfinite(g)):
        raise NonFiniteObjective(f"objective is {loss} at epoch {epoch}", step=epoch)
    return loss, g, post


def train_reg_nl(data, config, seed):
    """Full-batch ADAM on the evidence minus L2 penalties on feature weights and biases."""
    rng = np.random.default_rng(seed)
    params = init_params(_layer_sizes(data.x.shape[1], config.hidden), rng)
    obj = RegObjective(params, data.x, data.y, config.gamma_w, config.gamma_b)
    vec = np.concatenate(
        [obj.full[obj.fmask], [math.log(config.alpha_w_init), math.log(config.alpha_b_init), config.log_sigma2_init]]
    )
    lr = np.concatenate([np.full(obj.n_theta + 2, config.lr_theta), [config.lr_sigma]])
    state = AdamState(lr=lr)
    trace = []
    for epoch in range(int(config.epochs)):
        loss, g, _ = _checked(obj, vec, epoch)
        vec, state = adam_step(state, vec, g)
        trace.append(loss)

    if not np.all(np.isfinite(vec)):
        raise NonFiniteObjective("Reg NL parameters diverged")
    net, prior = obj.unpack(vec)
    val = float("nan")
    if data.has_validation:
        try:
            post = bl.blr_fit(forward_features(net, data.x), data.y, prior)
        except NotPositiveDefinite as exc:
            raise NonFiniteObjective(str(exc)) from exc
        val = float(np.mean(bl.blr_predict(post, forward_features(net, data.x_val)).logpdf(data.y_val)))
    return TrainedModel(net, prior, "reg", np.array(trace), val, None, int(config.epochs))


def floor_prior(prior):
    return bl.NigPrior(*(max(v, HEAD_FLOOR) for v in (prior.alpha_w, prior.alpha_b, prior.a0, prior.b0)))


def train_bn(data, config, seed):
    """Full-batch ADAM on the normal-inverse-gamma evidence.

    With ``optimize_prior`` the prior parameters are learned jointly with the
    features, otherwise they stay fixed. The validation log likelihood of the
    Student-t predictive is tracked at every epoch (epoch 0 is the
    initialization); with ``early_stopping`` the parameters of the best epoch
    are returned, else the final ones.
    """
    rng = np.random.default_rng(seed)
    params = init_params(_layer_sizes(data.x.shape[1], config.hidden), rng)
    obj = BnObjective(params, data.x, data.y, floor_prior(config.prior), config.optimize_prior)
    vec = obj.initial()
    state = AdamState(lr=config.lr)
    track = data.has_validation
    trace, val_trace = [], []
    best = (-np.inf, 0, vec.copy())
    epochs = int(config.max_epochs)
    for epoch in range(epochs + 1):
        loss, g, post = _checked(obj, vec, epoch)
        if track:
            pred = bl.nig_predict(post, forward_features(obj.network(vec), data.x_val))
            v = float(np.mean(pred.logpdf(data.y_val)))
            val_trace.append(v)
            if v > best[0]:
                best = (v, epoch, vec.copy())
        if epoch == epochs:
            break
        trace.append(loss)
        vec, state = adam_step(state, vec, g)
        if config.optimize_prior:
            vec[obj.n_theta :] = np.maximum(vec[obj.n_theta :], math.log(HEAD_FLOOR))

    if config.early_stopping and track:
        val, best_epoch, vec = best
    else:
        best_epoch = epochs
        val = val_trace[-1] if track else float("nan")
    net, prior = obj.unpack(vec)
    return TrainedModel(net, prior, "bn", np.array(trace), val, best_epoch, epochs, np.array(val_trace))


def lr_grid(n=10, lo=1e-4, hi=1e-2):
    return [10 ** (math.log10(lo) + (math.log10(hi) - math.log10(lo)) * i / (n - 1)) for i in range(n)]


def select_lr_grid(data, config, seed, lrs=None):
    """Train one BN model per learning rate; keep the best validation log likelihood.

    Entries whose training diverges are skipped.
    """
    best = None
    failures = []
    for lr in lrs or lr_grid():
        try:
            model = train_bn(data, replace(config, lr=lr), seed)
        except NonFiniteObjective as exc:
            failures.append((lr, str(exc)))
            continue
        if not np.isfinite(model.val_ll):
            failures.append((lr, "non-finite validation log likelihood"))
            continue
        if best is None or model.val_ll > best[1].val_ll:
            best = (lr, model)
    if best is None:
        raise NonFiniteObjective(f"every learning rate failed: {failures}")
    return best[1], best[0]
