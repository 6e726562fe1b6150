"""Largest singular value by power iteration."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np


class SpectralNorm(NamedTuple):
    value: float
    converged: bool
    iterations: int


def spectral_norm(matrix, tol: float = 1e-8, max_iter: int = 20000, seed: int = 0) -> SpectralNorm:
    """Power iteration on A^T A; stops when the relative change of the estimate is below ``tol``."""
    A = np.asarray(matrix, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("spectral_norm expects a 2-D matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if A.size == 0 or not np.any(A):
        return SpectralNorm(0.0, True, 0)
    v = np.random.default_rng(seed).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for it in range(1, max_iter + 1):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return SpectralNorm(0.0, True, it)
        v = w / nw
        new = np.sqrt(nw)  # |A^T A v| -> sigma^2 for unit v
        if abs(new - sigma) <= tol * new:
            return SpectralNorm(float(np.linalg.norm(A @ v)), True, it)
        sigma = new
    return SpectralNorm(float(np.linalg.norm(A @ v)), False, max_iter)
