# Compiled inner loops: small dense Cholesky, triangular solves and the
# Matern-5/2 Gram matrix with its log-hyperparameter gradient.
# Must stay numerically interchangeable with _kernels_py.
import numpy as np

from libc.math cimport exp, log, sqrt, M_PI

cdef double SQRT5 = 2.23606797749979


def cholesky_lower(const double[:, ::1] a):
    """Lower Cholesky factor of ``a`` (only the lower triangle is read).

    Returns ``(L, ok)``; ``ok`` is False when a pivot is not strictly positive.
    """
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double s, d
    out = np.zeros((n, n))
    cdef double[:, ::1] L = out
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > 0.0):
            return out, False
        d = sqrt(s)
        L[j, j] = d
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / d
    return out, True


def cho_solve(const double[:, ::1] L, const double[:, ::1] b):
    """Solve ``(L L^T) x = b`` for a 2-D right-hand side."""
    cdef Py_ssize_t n = L.shape[0]
    cdef Py_ssize_t m = b.shape[1]
    cdef Py_ssize_t i, k, c
    cdef double s
    out = np.array(b, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] x = out
    for c in range(m):
        for i in range(n):
            s = x[i, c]
            for k in range(i):
                s -= L[i, k] * x[k, c]
            x[i, c] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = x[i, c]
            for k in range(i + 1, n):
                s -= L[k, i] * x[k, c]
            x[i, c] = s / L[i, i]
    return out


def matern52_cross(const double[:, ::1] x1, const double[:, ::1] x2,
                   const double[::1] lengthscales, double signal_variance):
    cdef Py_ssize_t n1 = x1.shape[0]
    cdef Py_ssize_t n2 = x2.shape[0]
    cdef Py_ssize_t d = x1.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double r2, t, r
    out = np.empty((n1, n2))
    cdef double[:, ::1] K = out
    for i in range(n1):
        for j in range(n2):
            r2 = 0.0
            for k in range(d):
                t = (x1[i, k] - x2[j, k]) / lengthscales[k]
                r2 += t * t
            r = SQRT5 * sqrt(r2)
            K[i, j] = signal_variance * (1.0 + r + r * r / 3.0) * exp(-r)
    return out


def gp_lml_grad(const double[:, ::1] x, const double[::1] y,
                const double[::1] log_params, double jitter):
    """GP log marginal likelihood and gradient w.r.t. log hyperparameters.

    ``log_params`` is ``[log signal_var, log lengthscale_1..d, log noise_var]``.
    Returns ``(value, grad, ok)``.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double sf2 = exp(log_params[0])
    cdef double sn2 = exp(log_params[d + 1])
    cdef double r2, r, t, e, w, val, s
    ls_arr = np.exp(np.asarray(log_params[1:d + 1]))
    cdef double[::1] ls = ls_arr
    grad_arr = np.zeros(d + 2)
    cdef double[::1] g = grad_arr

    K_arr = np.empty((n, n))
    cdef double[:, ::1] K = K_arr
    for i in range(n):
        K[i, i] = sf2 + sn2 + jitter
        for j in range(i):
            r2 = 0.0
            for k in range(d):
                t = (x[i, k] - x[j, k]) / ls[k]
                r2 += t * t
            r = SQRT5 * sqrt(r2)
            K[i, j] = sf2 * (1.0 + r + r * r / 3.0) * exp(-r)
            K[j, i] = K[i, j]

    L_arr, ok = cholesky_lower(K_arr)
    if not ok:
        return np.nan, grad_arr, False
    cdef double[:, ::1] L = L_arr

    alpha_arr = cho_solve(L_arr, np.ascontiguousarray(np.asarray(y).reshape(n, 1)))[:, 0]
    cdef double[::1] alpha = np.ascontiguousarray(alpha_arr)
    Kinv_arr = cho_solve(L_arr, np.eye(n))
    cdef double[:, ::1] Kinv = Kinv_arr

    val = -0.5 * n * log(2.0 * M_PI)
    for i in range(n):
        val -= 0.5 * y[i] * alpha[i] + log(L[i, i])

    # grad = 0.5 * sum_ij (alpha_i alpha_j - Kinv_ij) dK_ij
    s = 0.0
    for i in range(n):
        w = alpha[i] * alpha[i] - Kinv[i, i]
        g[0] += 0.5 * w * sf2
        s += w
    g[d + 1] = 0.5 * s * sn2
    for i in range(n):
        for j in range(i):
            w = alpha[i] * alpha[j] - Kinv[i, j]
            r2 = 0.0
            for k in range(d):
                t = (x[i, k] - x[j, k]) / ls[k]
                r2 += t * t
            r = SQRT5 * sqrt(r2)
            e = exp(-r)
            # off-diagonal pairs counted twice
            g[0] += w * sf2 * (1.0 + r + r * r / 3.0) * e
            t = w * (5.0 / 3.0) * sf2 * (1.0 + r) * e
            for k in range(d):
                r2 = (x[i, k] - x[j, k]) / ls[k]
                g[k + 1] += t * r2 * r2
    return val, grad_arr, True
