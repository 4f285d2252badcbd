"""Dense symmetric positive definite linear algebra.

Matrices are plain float64 numpy arrays. The factorization and solves run in
the compiled kernels when available (see ``_backend``).
"""
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import DimensionMismatch, NotPositiveDefinite

JITTER_BASE = 1e-10
JITTER_ESCALATIONS = 3


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self):
        return self.lower.shape[0]


def cholesky(a, check_symmetric=True):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    On failure a diagonal jitter of ``1e-10 * mean(diag(a))`` is added and
    escalated by 10x up to three times before giving up.

    Raises
    ------
    NotPositiveDefinite
        If every jittered attempt fails.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"cholesky needs a square matrix, got shape {a.shape}")
    if check_symmetric:
        scale = max(np.max(np.abs(a)), 1e-300)
        if np.max(np.abs(a - a.T)) > 1e-8 * scale:
            raise ValueError("matrix is not symmetric within relative 1e-8")

    L, ok = kernels.cholesky_lower(a)
    if ok:
        return CholeskyFactor(L)
    mean_diag = float(np.mean(np.diag(a)))
    jitter = JITTER_BASE * abs(mean_diag) if mean_diag != 0 else JITTER_BASE
    for _ in range(JITTER_ESCALATIONS):
        L, ok = kernels.cholesky_lower(a + jitter * np.eye(a.shape[0]))
        if ok:
            return CholeskyFactor(L, jitter)
        jitter *= 10.0
    raise NotPositiveDefinite(
        f"Cholesky failed after {JITTER_ESCALATIONS} jitter escalations (last jitter {jitter / 10:.3g})"
    )


def solve_psd(f, b):
    """Solve ``(L L^T) x = b``; ``b`` may be a vector or a matrix."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != f.dim:
        raise DimensionMismatch(f"factor has dim {f.dim}, right-hand side has {b.shape[0]} rows")
    if b.ndim == 1:
        return kernels.cho_solve(f.lower, np.ascontiguousarray(b.reshape(-1, 1)))[:, 0]
    return kernels.cho_solve(f.lower, np.ascontiguousarray(b))


def inverse_psd(f):
    return solve_psd(f, np.eye(f.dim))


def logdet_psd(f):
    return 2.0 * float(np.sum(np.log(np.diag(f.lower))))
