"""Principal-axis extraction via power iteration with deflation.

Kept separate from any dense eigensolver so tests can verify against
numpy's eigendecomposition as an independent oracle.
"""

from __future__ import annotations

import numpy as np

from .errors import FitError


def top_eigenvectors(cov: np.ndarray, k: int = 1, tol: float = 1e-10, max_iter: int = 100_000):
    """Leading k eigenvectors/eigenvalues of a symmetric PSD matrix.

    Power iteration on the (deflated) matrix; converges when successive
    unit vectors differ by less than tol. Eigenvector signs are arbitrary.
    """
    cov = np.asarray(cov, dtype=np.float64)
    d = cov.shape[0]
    if cov.shape != (d, d):
        raise FitError("covariance must be square")
    work = cov.copy()
    vectors = np.zeros((k, d))
    values = np.zeros(k)
    for comp in range(k):
        vec = _power_iterate(work, tol, max_iter)
        lam = float(vec @ work @ vec)
        vectors[comp] = vec
        values[comp] = lam
        work = work - lam * np.outer(vec, vec)
    return vectors, values


def _power_iterate(mat, tol, max_iter):
    d = mat.shape[0]
    # deterministic start; restart with a different vector on stagnation
    for attempt in range(3):
        vec = np.ones(d) if attempt == 0 else np.cos(np.arange(d) * (attempt + 2.0))
        norm = np.linalg.norm(vec)
        if norm == 0:
            continue
        vec /= norm
        for _ in range(max_iter):
            nxt = mat @ vec
            norm = np.linalg.norm(nxt)
            if norm < 1e-300:
                break  # matrix annihilates this direction; restart
            nxt /= norm
            # sign-insensitive convergence test
            if min(np.linalg.norm(nxt - vec), np.linalg.norm(nxt + vec)) < tol:
                return nxt
            vec = nxt
        else:
            return vec
    return vec


def zscore_columns(matrix: np.ndarray, stds_floor_to_one: bool = True):
    """Column z-scoring; constant columns get std forced to 1 (zero z)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    means = matrix.mean(axis=0)
    stds = matrix.std(axis=0)
    constant = stds == 0.0
    if stds_floor_to_one:
        stds = np.where(constant, 1.0, stds)
    return (matrix - means) / stds, means, stds, constant
