"""Finite-difference and oracle utilities shared by the test modules."""
import numpy as np
from scipy.stats import multivariate_normal, multivariate_t


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(analytic, numeric):
    """Norm-wise relative error ``|a - n| / max(|n|, 1e-12)``."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), 1e-12))


def random_features(rng, n, m):
    """Feature matrix whose last column is the constant bias feature."""
    return np.hstack([rng.normal(size=(n, m - 1)), np.ones((n, 1))])


def gaussian_evidence_oracle(phi, y, alpha_w, alpha_b, sigma2):
    a = np.r_[np.full(phi.shape[1] - 1, alpha_w), alpha_b]
    cov = sigma2 * np.eye(len(y)) + (phi * a) @ phi.T
    return multivariate_normal(np.zeros(len(y)), cov).logpdf(y)


def student_evidence_oracle(phi, y, alpha_w, alpha_b, a0, b0):
    a = np.r_[np.full(phi.shape[1] - 1, alpha_w), alpha_b]
    shape = (b0 / a0) * (np.eye(len(y)) + (phi * a) @ phi.T)
    return multivariate_t(np.zeros(len(y)), shape, df=2 * a0).logpdf(y)
