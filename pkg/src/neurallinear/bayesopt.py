"""Gaussian-process Bayesian optimization for maximizing validation log likelihood.

The surrogate is a zero-mean GP with an ARD Matern-5/2 kernel and a learned
noise variance on inputs normalized to the unit cube and standardized outputs.
Kernel hyperparameters are fitted by ADAM on the log marginal likelihood and
then slice-sampled; expected improvement is averaged over the samples.
"""
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ._backend import kernels
from .errors import NotPositiveDefinite
from .mlp import AdamState, adam_step
from .numerics import CholeskyFactor, solve_psd
from .slicesample import SliceConfig, slice_sweep

logger = logging.getLogger(__name__)

GP_JITTER = 1e-8
SQRT_2PI = math.sqrt(2.0 * math.pi)


def matern52(r, lengthscale=1.0, signal_variance=1.0):
    rho = np.sqrt(5.0) * np.asarray(r, dtype=float) / lengthscale
    return signal_variance * (1.0 + rho + rho * rho / 3.0) * np.exp(-rho)


@dataclass(frozen=True)
class Dimension:
    name: str
    lo: float
    hi: float
    scale: str = "linear"  # or "log"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi, got [{self.lo}, {self.hi}]")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"{self.name}: unknown scale {self.scale!r}")
        if self.scale == "log" and self.lo <= 0:
            raise ValueError(f"{self.name}: log scale needs a positive lower bound")


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple

    @property
    def names(self):
        return tuple(d.name for d in self.dims)

    def __len__(self):
        return len(self.dims)

    def normalize(self, point):
        """Natural-unit point (dict or sequence) to the unit cube."""
        if isinstance(point, dict):
            point = [point[d.name] for d in self.dims]
        out = np.empty(len(self.dims))
        for i, (d, v) in enumerate(zip(self.dims, point)):
            if d.scale == "log":
                out[i] = (np.log(v) - np.log(d.lo)) / (np.log(d.hi) - np.log(d.lo))
            else:
                out[i] = (v - d.lo) / (d.hi - d.lo)
        return out

    def denormalize(self, u):
        out = {}
        for d, t in zip(self.dims, np.asarray(u, dtype=float)):
            if d.scale == "log":
                out[d.name] = float(np.exp(np.log(d.lo) + t * (np.log(d.hi) - np.log(d.lo))))
            else:
                out[d.name] = float(d.lo + t * (d.hi - d.lo))
        return out


@dataclass(frozen=True)
class GpHyperParams:
    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float

    @classmethod
    def from_log(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(float(np.exp(v[0])), np.exp(v[1:-1]), float(np.exp(v[-1])))

    def to_log(self):
        return np.concatenate([[np.log(self.signal_variance)], np.log(self.lengthscales), [np.log(self.noise_variance)]])


def gp_log_marginal(x, y, log_params):
    """Log marginal likelihood of a zero-mean GP and its gradient in log hyperparameters."""
    value, grad, ok = kernels.gp_lml_grad(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(log_params, dtype=np.float64),
        GP_JITTER,
    )
    if not ok:
        raise NotPositiveDefinite("GP Gram matrix is not positive definite")
    return value, grad


def _log_box(d):
    lo = np.concatenate([[-6.0], np.full(d, np.log(1e-3)), [np.log(1e-6)]])
    hi = np.concatenate([[6.0], np.full(d, np.log(1e2)), [np.log(10.0)]])
    return lo, hi


@dataclass
class GpSurrogate:
    inputs: np.ndarray
    outputs: np.ndarray
    y_mean: float
    y_std: float
    hypers: list
    optimum: GpHyperParams
    _cache: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self._cache:
            self._cache = [_factorize(self.inputs, self.outputs, h) for h in self.hypers]


def _factorize(x, y, h):
    K = kernels.matern52_cross(x, x, np.ascontiguousarray(h.lengthscales), h.signal_variance)
    K[np.diag_indices_from(K)] += h.noise_variance + GP_JITTER
    L, ok = kernels.cholesky_lower(K)
    if not ok:
        raise NotPositiveDefinite("GP Gram matrix is not positive definite")
    f = CholeskyFactor(L)
    return f, solve_psd(f, y)


def gp_fit(inputs, outputs, seed=None, n_adam=5000, lr=1e-2, n_samples=20, n_burnin=5, sample_halfwidth=5.0):
    """Fit kernel hyperparameters by ADAM, then slice-sample them around the optimum."""
    x = np.ascontiguousarray(inputs, dtype=np.float64)
    y_raw = np.asarray(outputs, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("gp_fit needs at least two points")
    y_mean = float(np.mean(y_raw))
    y_std = float(np.std(y_raw))
    if not y_std > 1e-12:
        y_std = 1.0
    y = np.ascontiguousarray((y_raw - y_mean) / y_std)
    d = x.shape[1]
    lo, hi = _log_box(d)

    theta = np.concatenate([[0.0], np.full(d, np.log(0.5)), [np.log(0.1)]])
    state = AdamState(lr=lr)
    for _ in range(n_adam):
        try:
            _, g = gp_log_marginal(x, y, theta)
        except NotPositiveDefinite:
            break
        theta_new, state = adam_step(state, theta, -g)
        theta = np.clip(theta_new, lo, hi)
    optimum = GpHyperParams.from_log(theta)

    hypers = [optimum]
    if n_samples > 0:
        box = np.column_stack([theta - sample_halfwidth, theta + sample_halfwidth])

        def logf(v):
            return gp_log_marginal(x, y, v)[0]

        cfg = SliceConfig(step_width=1.0, max_stepout=10, n_samples=n_samples, n_burnin=n_burnin, bounds=box)
        hypers = [GpHyperParams.from_log(s.coords) for s in slice_sweep(logf, theta, cfg, seed)]
    return GpSurrogate(x, y, y_mean, y_std, hypers, optimum)


def gp_posterior(surrogate, x):
    """Per-sample predictive mean and variance (standardized units, noise included).

    Returns two arrays of shape ``(n_hyper_samples, n_points)``.
    """
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    means, variances = [], []
    for h, (f, alpha) in zip(surrogate.hypers, surrogate._cache):
        ls = np.ascontiguousarray(h.lengthscales)
        Ks = kernels.matern52_cross(x, surrogate.inputs, ls, h.signal_variance)
        mean = Ks @ alpha
        v = solve_psd(f, Ks.T)
        var = h.signal_variance + h.noise_variance - np.sum(Ks * v.T, axis=1)
        means.append(mean)
        variances.append(np.maximum(var, 0.0))
    return np.array(means), np.array(variances)


def expected_improvement(mean, variance, best):
    """Expected improvement over ``best`` for maximization."""
    mean = np.asarray(mean, dtype=float)
    s = np.sqrt(np.maximum(np.asarray(variance, dtype=float), 0.0))
    gain = mean - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(s > 0, gain / np.where(s > 0, s, 1.0), 0.0)
    ei = gain * ndtr(z) + s * np.exp(-0.5 * z * z) / SQRT_2PI
    return np.where(s > 0, np.maximum(ei, 0.0), np.maximum(gain, 0.0))


def acquisition(surrogate, u):
    """EI averaged over GP hyperparameter samples."""
    m, v = gp_posterior(surrogate, u)
    return np.mean(expected_improvement(m, v, np.max(surrogate.outputs)), axis=0)


def maximize_acquisition(surrogate, d, rng, n_candidates=1000, n_starts=5, n_steps=50, step=0.1):
    cand = rng.random((n_candidates, d))
    vals = acquisition(surrogate, cand)
    order = np.argsort(-vals, kind="stable")[:n_starts]
    starts = cand[order].copy()
    start_vals = vals[order].copy()
    steps = np.full(len(starts), step)
    eye = np.eye(d)
    for _ in range(n_steps):
        moves = np.concatenate([eye, -eye])
        props = np.clip(starts[:, None, :] + steps[:, None, None] * moves[None], 0.0, 1.0)
        pv = acquisition(surrogate, props.reshape(-1, d)).reshape(len(starts), 2 * d)
        best = np.argmax(pv, axis=1)
        gain = pv[np.arange(len(starts)), best] > start_vals
        starts[gain] = props[np.arange(len(starts)), best][gain]
        start_vals[gain] = pv[np.arange(len(starts)), best][gain]
        steps[~gain] *= 0.5
    i = int(np.argmax(start_vals))
    return starts[i], float(start_vals[i])


@dataclass
class BoResult:
    best_point: dict
    best_value: float
    history: list
    incumbent_trace: list

    def to_json(self):
        return {
            "best_point": self.best_point,
            "best_value": self.best_value,
            "history": self.history,
            "incumbent_trace": self.incumbent_trace,
        }


def bo_minimize_negative(objective, space, n_iter=50, n_random=10, seed=None, initial_points=None, gp_kwargs=None):
    """Maximize ``objective`` (equivalently minimize its negative) over ``space``.

    ``n_random`` uniform draws (the first of which may be replaced by
    ``initial_points``) are followed by ``n_iter`` EI-guided evaluations.
    Evaluations that raise or return a non-finite value are logged as failed
    and shown to the GP one observed standard deviation below the worst
    successful value.
    """
    rng = np.random.default_rng(seed)
    gp_kwargs = gp_kwargs or {}
    d = len(space)
    history = []
    inputs = []
    trace = []
    best_value = -np.inf
    best_point = None

    def evaluate(u):
        nonlocal best_value, best_point
        point = space.denormalize(u)
        t0 = time.perf_counter()
        try:
            value = float(objective(point))
        except Exception as exc:  # noqa: BLE001 - any failure counts as a failed probe
            logger.info("objective failed at %s: %s", point, exc)
            value = float("nan")
        failed = not np.isfinite(value)
        history.append(
            {"point": point, "value": None if failed else value, "seconds": time.perf_counter() - t0, "failed": failed}
        )
        inputs.append(np.asarray(u, dtype=float))
        if not failed and value > best_value:
            best_value, best_point = value, point
        trace.append(best_value if np.isfinite(best_value) else None)

    warm = [np.clip(space.normalize(p), 0.0, 1.0) for p in (initial_points or [])][:n_random]
    draws = rng.random((n_random, d))
    for i in range(n_random):
        evaluate(warm[i] if i < len(warm) else draws[i])

    for _ in range(n_iter):
        y = _gp_targets(history)
        surrogate = gp_fit(np.array(inputs), y, seed=rng.integers(2**32), **gp_kwargs)
        u, _ = maximize_acquisition(surrogate, d, rng)
        evaluate(u)

    return BoResult(best_point, float(best_value), history, trace)


def _gp_targets(history):
    vals = np.array([np.nan if h["failed"] else h["value"] for h in history])
    ok = np.isfinite(vals)
    if not ok.any():
        return np.zeros(len(vals))
    fill = np.min(vals[ok]) - (np.std(vals[ok]) if ok.sum() > 1 else 1.0)
    if not fill < np.min(vals[ok]):
        fill = np.min(vals[ok]) - 1.0
    return np.where(ok, vals, fill)
