"""Pure numpy implementations of the compiled kernels in ``_kernels.pyx``.

Same function names, signatures and return conventions; selected at import
time when the extension is unavailable.
"""
import numpy as np
from scipy.linalg import solve_triangular

SQRT5 = np.sqrt(5.0)


def cholesky_lower(a):
    try:
        return np.linalg.cholesky(a), True
    except np.linalg.LinAlgError:
        return np.zeros_like(a), False


def cho_solve(L, b):
    z = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L, z, lower=True, trans="T", check_finite=False)


def _scaled_sqdist(x1, x2, lengthscales):
    diff = (x1[:, None, :] - x2[None, :, :]) / lengthscales
    return diff, np.sum(diff**2, axis=-1)


def matern52_cross(x1, x2, lengthscales, signal_variance):
    _, r2 = _scaled_sqdist(x1, x2, lengthscales)
    r = SQRT5 * np.sqrt(r2)
    return signal_variance * (1.0 + r + r * r / 3.0) * np.exp(-r)


def gp_lml_grad(x, y, log_params, jitter):
    n, d = x.shape
    sf2 = np.exp(log_params[0])
    ls = np.exp(log_params[1 : d + 1])
    sn2 = np.exp(log_params[d + 1])
    grad = np.zeros(d + 2)

    diff, r2 = _scaled_sqdist(x, x, ls)
    r = SQRT5 * np.sqrt(r2)
    e = np.exp(-r)
    Kf = sf2 * (1.0 + r + r * r / 3.0) * e
    K = Kf + (sn2 + jitter) * np.eye(n)
    L, ok = cholesky_lower(K)
    if not ok:
        return np.nan, grad, False
    alpha = cho_solve(L, y.reshape(n, 1))[:, 0]
    Kinv = cho_solve(L, np.eye(n))
    value = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2.0 * np.pi)

    W = np.outer(alpha, alpha) - Kinv
    grad[0] = 0.5 * np.sum(W * Kf)
    dk_common = (5.0 / 3.0) * sf2 * (1.0 + r) * e
    grad[1 : d + 1] = 0.5 * np.einsum("ij,ijk->k", W * dk_common, diff**2)
    grad[d + 1] = 0.5 * np.trace(W) * sn2
    return value, grad, True
