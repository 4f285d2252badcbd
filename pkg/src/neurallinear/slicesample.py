"""Univariate slice sampling (stepping out + shrinkage) and predictive mixtures.

Hyperparameters are sampled in log space under a uniform prior on a bounded
box: points outside the box get log density -inf.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import bayes_linear as bl
from .errors import NotPositiveDefinite, StuckChain
from .mlp import forward_features

MAX_SHRINK_REJECTIONS = 1000

GAUSSIAN_HEAD_NAMES = ("log_alpha_w", "log_alpha_b", "log_sigma2")
GAUSSIAN_HEAD_BOUNDS = ((-10.0, 10.0), (-10.0, 10.0), (-10.0, 10.0))
NIG_HEAD_NAMES = ("log_alpha_w", "log_alpha_b", "log_a0", "log_b0")
NIG_HEAD_BOUNDS = ((-10.0, 10.0), (-10.0, 10.0), (np.log(1e-3), np.log(20.0)), (np.log(1e-3), np.log(10.0)))


@dataclass
class SliceConfig:
    step_width: float = 1.0
    max_stepout: int = 10
    n_samples: int = 200
    n_burnin: int = 20
    bounds: object = None  # (lo, hi) for 1-D use, or a sequence of pairs
    names: tuple = field(default=())

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.step_width < 0:
            raise ValueError("step_width must be non-negative")
        for lo, hi in self._pairs():
            if not lo < hi:
                raise ValueError(f"invalid bounds [{lo}, {hi}]")

    def _pairs(self):
        if self.bounds is None:
            return []
        b = np.asarray(self.bounds, dtype=float)
        return [tuple(b)] if b.ndim == 1 else [tuple(p) for p in b]

    def bounds_array(self, d):
        pairs = self._pairs()
        if not pairs:
            return np.tile([-np.inf, np.inf], (d, 1))
        arr = np.asarray(pairs, dtype=float)
        if arr.shape[0] == 1 and d > 1:
            arr = np.tile(arr, (d, 1))
        if arr.shape[0] != d:
            raise ValueError(f"{arr.shape[0]} bound pairs for {d} coordinates")
        return arr


@dataclass(frozen=True)
class HyperSample:
    coords: np.ndarray
    names: tuple = ()

    def as_dict(self):
        return dict(zip(self.names, map(float, self.coords)))


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _safe(logf, lo, hi):
    def wrapped(x):
        if not lo < x < hi:
            return -np.inf
        try:
            v = float(logf(x))
        except (NotPositiveDefinite, FloatingPointError, OverflowError):
            return -np.inf
        return v if np.isfinite(v) else -np.inf

    return wrapped


def _slice_update(logf, x, logfx, w, m, rng):
    """One slice-sampling transition from ``x``; ``logf`` already handles bounds."""
    log_y = logfx - rng.exponential()
    left = x - w * rng.random()
    right = left + w
    j = int(np.floor(m * rng.random()))
    k = m - 1 - j
    while j > 0 and logf(left) > log_y:
        left -= w
        j -= 1
    while k > 0 and logf(right) > log_y:
        right += w
        k -= 1

    for _ in range(MAX_SHRINK_REJECTIONS):
        x1 = left + rng.random() * (right - left)
        logf1 = logf(x1)
        if logf1 > log_y:
            return x1, logf1
        if x1 < x:
            left = x1
        elif x1 > x:
            right = x1
        else:
            break
    raise StuckChain(f"no acceptable point after shrinking around x={x!r}")


def slice_sample_1d(logf, x0, config, seed=None):
    """Chain of ``config.n_samples`` draws after ``config.n_burnin`` discarded ones."""
    rng = _rng(seed)
    (lo, hi), = config.bounds_array(1)
    f = _safe(logf, lo, hi)
    x = float(x0)
    fx = f(x)
    if not np.isfinite(fx):
        raise ValueError(f"log density at the initial point {x0!r} is not finite")
    chain = np.empty(config.n_samples)
    for i in range(config.n_burnin + config.n_samples):
        x, fx = _slice_update(f, x, fx, config.step_width, config.max_stepout, rng)
        if i >= config.n_burnin:
            chain[i - config.n_burnin] = x
    return chain


def slice_sweep(logf, x0, config, seed=None):
    """Coordinate-wise slice sampling of a vector target.

    One sample is kept per full sweep over the coordinates (in index order).
    """
    rng = _rng(seed)
    x = np.array(x0, dtype=np.float64).reshape(-1)
    d = x.size
    bounds = config.bounds_array(d)
    names = tuple(config.names) if config.names else tuple(f"x{i}" for i in range(d))

    def full(v):
        if np.any(v <= bounds[:, 0]) or np.any(v >= bounds[:, 1]):
            return -np.inf
        try:
            val = float(logf(v))
        except (NotPositiveDefinite, FloatingPointError, OverflowError):
            return -np.inf
        return val if np.isfinite(val) else -np.inf

    fx = full(x)
    if not np.isfinite(fx):
        raise ValueError("log density at the initial point is not finite")

    samples = []
    for sweep in range(config.n_burnin + config.n_samples):
        for i in range(d):

            def along(t, i=i):
                v = x.copy()
                v[i] = t
                return full(v)

            x[i], fx = _slice_update(along, x[i], fx, config.step_width, config.max_stepout, rng)
        if sweep >= config.n_burnin:
            samples.append(HyperSample(x.copy(), names))
    return samples


@dataclass(frozen=True)
class PredictiveMixture:
    """Equal-weight mixture; component index is axis 0.

    For the Gaussian family ``scale`` holds variances; for the Student-t
    family it holds squared scales and ``dof`` gives one value per component.
    """

    loc: np.ndarray
    scale: np.ndarray
    dof: object = None

    @property
    def n_components(self):
        return np.shape(self.loc)[0]

    @property
    def family(self):
        return "gaussian" if self.dof is None else "student_t"

    def _dof_b(self):
        dof = np.asarray(self.dof, dtype=float)
        return dof.reshape(dof.shape + (1,) * (np.ndim(self.loc) - dof.ndim))

    def component_logpdf(self, y):
        if self.dof is None:
            return bl.GaussianPredictive(self.loc, self.scale).logpdf(y)
        nu = self._dof_b()
        return bl.StudentTPredictive(self.loc, self.scale, nu).logpdf(y)

    def component_variance(self):
        if self.dof is None:
            return np.asarray(self.scale)
        nu = self._dof_b()
        with np.errstate(divide="ignore"):
            return np.where(nu > 2, self.scale * nu / np.maximum(nu - 2.0, 1e-300), np.inf)

    def subset(self, index):
        """Mixture restricted to ``index`` along the trailing (test point) axis."""
        return PredictiveMixture(self.loc[:, index], self.scale[:, index], self.dof)


def mixture_predict(mix, y):
    """Log density at ``y``, mixture mean and variance (law of total variance)."""
    log_density = logsumexp(mix.component_logpdf(y), axis=0) - np.log(mix.n_components)
    mean = np.mean(mix.loc, axis=0)
    second = np.mean(mix.component_variance() + np.asarray(mix.loc) ** 2, axis=0)
    return log_density, mean, second - mean**2


def gaussian_mixture(means, variances):
    return PredictiveMixture(np.asarray(means, float), np.asarray(variances, float))


@dataclass
class HeadMixture:
    """Posteriors of a Bayesian head, one per hyperparameter sample."""

    params: object
    posteriors: list
    samples: list

    @property
    def is_nig(self):
        return isinstance(self.posteriors[0], bl.NigPosterior)

    def predict_features(self, phi_star):
        phi_star = np.atleast_2d(phi_star)
        locs, scales, dofs = [], [], []
        for post in self.posteriors:
            if self.is_nig:
                p = bl.nig_predict(post, phi_star)
                scales.append(p.scale)
                dofs.append(p.dof)
            else:
                p = bl.blr_predict(post, phi_star)
                scales.append(p.variance)
            locs.append(p.mean)
        return PredictiveMixture(np.array(locs), np.array(scales), np.array(dofs) if dofs else None)

    def predict(self, x):
        return self.predict_features(forward_features(self.params, x))

    def summary(self):
        coords = np.array([s.coords for s in self.samples])
        names = self.samples[0].names
        return {
            name: {"mean": float(coords[:, i].mean()), "std": float(coords[:, i].std())}
            for i, name in enumerate(names)
        }


def head_coordinates(head):
    """Log-space coordinates, names and default bounds for a head prior."""
    if isinstance(head, bl.NigPrior):
        x = np.log([head.alpha_w, head.alpha_b, head.a0, head.b0])
        return x, NIG_HEAD_NAMES, np.array(NIG_HEAD_BOUNDS)
    x = np.log([head.alpha_w, head.alpha_b, head.sigma2])
    return x, GAUSSIAN_HEAD_NAMES, np.array(GAUSSIAN_HEAD_BOUNDS)


def head_from_coordinates(head, coords):
    v = np.exp(coords)
    if isinstance(head, bl.NigPrior):
        return bl.NigPrior(*v)
    return bl.GaussianPrior(*v)


def marginalize_head(model, data, config=None, seed=None):
    """Slice-sample the head hyperparameters under the evidence with the features fixed.

    ``model`` needs ``params`` (MlpParams) and ``head`` (GaussianPrior or
    NigPrior); ``data`` is the ``(x, y)`` training pair. The chain starts at
    the trained hyperparameters, clipped into the sampling box.
    """
    config = config or SliceConfig()
    x, y = data
    stats = bl.FeatureStats.from_data(forward_features(model.params, x), y)
    x0, names, default_bounds = head_coordinates(model.head)
    bounds = config.bounds_array(len(x0)) if config.bounds is not None else default_bounds
    span = bounds[:, 1] - bounds[:, 0]
    x0 = np.clip(x0, bounds[:, 0] + 1e-6 * span, bounds[:, 1] - 1e-6 * span)

    nig = isinstance(model.head, bl.NigPrior)
    evidence = bl.nig_log_marginal_stats if nig else bl.blr_log_marginal_stats
    fit = bl.nig_fit_stats if nig else bl.blr_fit_stats

    def logf(coords):
        return evidence(stats, head_from_coordinates(model.head, coords))

    cfg = SliceConfig(
        step_width=config.step_width,
        max_stepout=config.max_stepout,
        n_samples=config.n_samples,
        n_burnin=config.n_burnin,
        bounds=bounds,
        names=names,
    )
    samples = slice_sweep(logf, x0, cfg, seed)
    posteriors = [fit(stats, head_from_coordinates(model.head, s.coords)) for s in samples]
    return HeadMixture(model.params, posteriors, samples)


def point_head(model, data):
    """Single-posterior mixture at the trained hyperparameters (no slice sampling)."""
    x, y = data
    stats = bl.FeatureStats.from_data(forward_features(model.params, x), y)
    x0, names, _ = head_coordinates(model.head)
    fit = bl.nig_fit_stats if isinstance(model.head, bl.NigPrior) else bl.blr_fit_stats
    return HeadMixture(model.params, [fit(stats, model.head)], [HyperSample(x0, names)])
