"""Conjugate Bayesian linear regression heads on a fixed feature matrix.

Two priors are supported:

* Gaussian: ``w ~ N(0, A)`` with known noise variance ``sigma2``.
* Normal-inverse-gamma: ``w | s2 ~ N(0, s2 A)``, ``s2 ~ InvGamma(a0, b0)``.

``A = diag(alpha_w, ..., alpha_w, alpha_b)``; the last feature column is the
constant bias column. All evidence computations work on ``M x M`` matrices
(``Phi^T Phi`` and the posterior precision) so the cost is ``O(N M^2 + M^3)``
and no ``N x N`` matrix is ever formed. Gradients are returned with respect
to the feature matrix and the logarithms of the positive hyperparameters.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .errors import DimensionMismatch
from .numerics import cholesky, inverse_psd, logdet_psd, solve_psd

LOG_2PI = np.log(2.0 * np.pi)
B_N_FLOOR = 1e-12


@dataclass(frozen=True)
class GaussianPrior:
    alpha_w: float
    alpha_b: float
    sigma2: float

    def __post_init__(self):
        if not (self.alpha_w > 0 and self.alpha_b > 0 and self.sigma2 > 0):
            raise ValueError(f"prior parameters must be positive: {self}")


@dataclass(frozen=True)
class NigPrior:
    alpha_w: float
    alpha_b: float
    a0: float
    b0: float

    def __post_init__(self):
        if not (self.alpha_w > 0 and self.alpha_b > 0 and self.a0 > 0 and self.b0 > 0):
            raise ValueError(f"prior parameters must be positive: {self}")


def prior_variances(alpha_w, alpha_b, m):
    return np.concatenate([np.full(m - 1, float(alpha_w)), [float(alpha_b)]])


@dataclass(frozen=True)
class FeatureStats:
    """Sufficient statistics of ``(Phi, y)`` for repeated head fits."""

    gram: np.ndarray
    phi_y: np.ndarray
    yy: float
    n: int

    @classmethod
    def from_data(cls, phi, y):
        phi, y = _check_data(phi, y)
        return cls(phi.T @ phi, phi.T @ y, float(y @ y), phi.shape[0])

    @property
    def m(self):
        return self.gram.shape[0]


def _check_data(phi, y):
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if phi.ndim != 2 or phi.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"feature matrix {phi.shape} does not match {y.shape[0]} targets")
    return phi, y


@dataclass(frozen=True)
class GaussianPredictive:
    mean: np.ndarray
    variance: np.ndarray

    def logpdf(self, y):
        return -0.5 * (LOG_2PI + np.log(self.variance) + (y - self.mean) ** 2 / self.variance)


@dataclass(frozen=True)
class StudentTPredictive:
    """Student-t with squared scale ``scale`` and ``dof`` degrees of freedom."""

    mean: np.ndarray
    scale: np.ndarray
    dof: float

    def logpdf(self, y):
        nu = self.dof
        return (
            gammaln(0.5 * (nu + 1.0))
            - gammaln(0.5 * nu)
            - 0.5 * np.log(nu * np.pi * self.scale)
            - 0.5 * (nu + 1.0) * np.log1p((y - self.mean) ** 2 / (nu * self.scale))
        )

    @property
    def variance(self):
        if self.dof <= 2:
            return np.full_like(np.asarray(self.scale, dtype=float), np.inf)
        return self.scale * self.dof / (self.dof - 2.0)


@dataclass(frozen=True)
class GaussianBlrPosterior:
    w_n: np.ndarray
    precision: object  # CholeskyFactor of V_N^{-1}
    v_n: np.ndarray
    prior: GaussianPrior


@dataclass(frozen=True)
class NigPosterior:
    w_n: np.ndarray
    precision: object
    v_n: np.ndarray
    a_n: float
    b_n: float
    prior: NigPrior


def blr_fit_stats(stats, prior):
    A = prior_variances(prior.alpha_w, prior.alpha_b, stats.m)
    P = np.diag(1.0 / A) + stats.gram / prior.sigma2
    f = cholesky(P, check_symmetric=False)
    w = solve_psd(f, stats.phi_y / prior.sigma2)
    return GaussianBlrPosterior(w, f, inverse_psd(f), prior)


def blr_fit(phi, y, prior):
    """Posterior over output weights under a Gaussian prior and known noise."""
    return blr_fit_stats(FeatureStats.from_data(phi, y), prior)


def _quad_diag(phi_star, v):
    return np.einsum("ij,jk,ik->i", phi_star, v, phi_star)


def _as_rows(post, phi_star):
    phi_star = np.asarray(phi_star, dtype=np.float64)
    single = phi_star.ndim == 1
    rows = phi_star.reshape(1, -1) if single else phi_star
    if rows.shape[1] != post.w_n.shape[0]:
        raise DimensionMismatch(f"feature vector has length {rows.shape[1]}, posterior has {post.w_n.shape[0]}")
    return rows, single


def blr_predict(post, phi_star):
    """Gaussian predictive at one feature vector or at each row of a matrix."""
    rows, single = _as_rows(post, phi_star)
    mean = rows @ post.w_n
    var = post.prior.sigma2 + _quad_diag(rows, post.v_n)
    if single:
        return GaussianPredictive(float(mean[0]), float(var[0]))
    return GaussianPredictive(mean, var)


def blr_log_marginal_stats(stats, prior):
    """Log evidence from sufficient statistics (value only)."""
    return _blr_evidence(stats, prior)[0]


def _blr_evidence(stats, prior):
    A = prior_variances(prior.alpha_w, prior.alpha_b, stats.m)
    s2 = prior.sigma2
    P = np.diag(1.0 / A) + stats.gram / s2
    f = cholesky(P, check_symmetric=False)
    w = solve_psd(f, stats.phi_y / s2)
    value = (
        -0.5 * stats.n * (LOG_2PI + np.log(s2))
        - 0.5 * np.sum(np.log(A))
        - 0.5 * logdet_psd(f)
        - 0.5 * (stats.yy - w @ stats.phi_y) / s2
    )
    return float(value), A, f, w


def blr_log_marginal(phi, y, prior, with_grad=True):
    """Log evidence ``log N(y; 0, sigma2 I + Phi A Phi^T)`` and its gradients.

    Returns ``(value, grads)`` where ``grads`` has keys ``phi``,
    ``log_alpha_w``, ``log_alpha_b`` and ``log_sigma2``.
    """
    if not with_grad:
        return _blr_evidence(FeatureStats.from_data(phi, y), prior)[0], None
    value, grads, _ = blr_evidence_full(phi, y, prior)
    return value, grads


def blr_evidence_full(phi, y, prior):
    """Evidence value, gradients and the posterior from a single factorization."""
    phi, y = _check_data(phi, y)
    stats = FeatureStats.from_data(phi, y)
    value, A, f, w = _blr_evidence(stats, prior)
    s2 = prior.sigma2
    V = inverse_psd(f)
    vd = np.diag(V)
    r = (y - phi @ w) / s2
    d_log_a = 0.5 * w**2 / A - 0.5 * (1.0 - vd / A)
    grads = {
        "phi": np.outer(r, w) - phi @ V / s2,
        "log_alpha_w": float(np.sum(d_log_a[:-1])),
        "log_alpha_b": float(d_log_a[-1]),
        "log_sigma2": float(0.5 * (s2 * (r @ r) - stats.n + stats.m - np.sum(vd / A))),
    }
    return value, grads, GaussianBlrPosterior(w, f, V, prior)


def nig_fit_stats(stats, prior):
    A = prior_variances(prior.alpha_w, prior.alpha_b, stats.m)
    P = np.diag(1.0 / A) + stats.gram
    f = cholesky(P, check_symmetric=False)
    w = solve_psd(f, stats.phi_y)
    a_n = prior.a0 + 0.5 * stats.n
    b_n = max(prior.b0 + 0.5 * (stats.yy - w @ stats.phi_y), B_N_FLOOR)
    return NigPosterior(w, f, inverse_psd(f), a_n, float(b_n), prior)


def nig_fit(phi, y, prior):
    """Normal-inverse-gamma posterior; ``b_N`` is floored at 1e-12 against cancellation."""
    return nig_fit_stats(FeatureStats.from_data(phi, y), prior)


def nig_predict(post, phi_star):
    """Student-t predictive: mean ``w_N.phi``, squared scale ``(b_N/a_N)(1 + phi V_N phi)``, dof ``2 a_N``."""
    rows, single = _as_rows(post, phi_star)
    mean = rows @ post.w_n
    scale = (post.b_n / post.a_n) * (1.0 + _quad_diag(rows, post.v_n))
    if single:
        return StudentTPredictive(float(mean[0]), float(scale[0]), 2.0 * post.a_n)
    return StudentTPredictive(mean, scale, 2.0 * post.a_n)


def _nig_evidence(stats, prior):
    A = prior_variances(prior.alpha_w, prior.alpha_b, stats.m)
    P = np.diag(1.0 / A) + stats.gram
    f = cholesky(P, check_symmetric=False)
    w = solve_psd(f, stats.phi_y)
    a0, b0 = prior.a0, prior.b0
    a_n = a0 + 0.5 * stats.n
    b_n = max(b0 + 0.5 * (stats.yy - w @ stats.phi_y), B_N_FLOOR)
    value = (
        gammaln(a_n)
        - gammaln(a0)
        + a0 * np.log(b0)
        - a_n * np.log(b_n)
        - 0.5 * stats.n * LOG_2PI
        - 0.5 * (np.sum(np.log(A)) + logdet_psd(f))
    )
    return float(value), A, f, w, a_n, b_n


def nig_log_marginal_stats(stats, prior):
    return _nig_evidence(stats, prior)[0]


def nig_log_marginal(phi, y, prior, with_grad=True):
    """Multivariate Student-t evidence ``T(y; 0, (b0/a0)(I + Phi A Phi^T), 2 a0)``.

    Returns ``(value, grads)`` with keys ``phi``, ``log_alpha_w``,
    ``log_alpha_b``, ``log_a0`` and ``log_b0``.
    """
    if not with_grad:
        return _nig_evidence(FeatureStats.from_data(phi, y), prior)[0], None
    value, grads, _ = nig_evidence_full(phi, y, prior)
    return value, grads


def nig_evidence_full(phi, y, prior):
    phi, y = _check_data(phi, y)
    stats = FeatureStats.from_data(phi, y)
    value, A, f, w, a_n, b_n = _nig_evidence(stats, prior)
    a0, b0 = prior.a0, prior.b0
    V = inverse_psd(f)
    vd = np.diag(V)
    kappa = a_n / b_n
    r = y - phi @ w
    d_log_a = 0.5 * kappa * w**2 / A - 0.5 * (1.0 - vd / A)
    grads = {
        "phi": kappa * np.outer(r, w) - phi @ V,
        "log_alpha_w": float(np.sum(d_log_a[:-1])),
        "log_alpha_b": float(d_log_a[-1]),
        "log_a0": float(a0 * (digamma(a_n) - digamma(a0) + np.log(b0) - np.log(b_n))),
        "log_b0": float(a0 - a_n * b0 / b_n),
    }
    return value, grads, NigPosterior(w, f, V, a_n, float(b_n), prior)
