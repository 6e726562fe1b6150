"""Gaussian random fields on mesh nodes via a Cholesky factor of a squared-exponential covariance.

Random streams come from numpy's counter-based Philox bit generator, keyed by
``(seed, stream, index)``. Sample ``index`` of a stream can therefore be replayed
on its own, independent of how many samples were drawn before it or by which worker.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

GENERATOR_NAME = "numpy.random.Philox(SeedSequence([seed, stream, index]))"


@dataclass(frozen=True)
class GrfSpec:
    length_scale: float
    target_min: float
    target_max: float
    domain: str = "interior-2D"  # or "boundary-1D"
    seed: int = 0

    def __post_init__(self):
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")
        if not self.target_min < self.target_max:
            raise ValueError("target_min must be below target_max")
        if self.domain not in ("interior-2D", "boundary-1D"):
            raise ValueError(f"unknown GRF domain {self.domain!r}")


def stream_id(name: str) -> int:
    """Stable integer for a named random stream (e.g. "f", "theta")."""
    return zlib.crc32(name.encode("utf-8"))


def rng_for(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream), int(index)])))


def covariance(points, length_scale: float, jitter: float = 1e-8) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d2 = cdist(pts, pts, "sqeuclidean")
    C = np.exp(-d2 / (2.0 * length_scale**2))
    C[np.diag_indices_from(C)] += jitter
    return C


def build_covariance_factor(points, length_scale: float, jitter: float = 1e-8, max_jitter: float = 1e-4) -> np.ndarray:
    """Lower Cholesky factor of exp(-|p_i - p_j|^2 / (2 l^2)) + jitter * I.

    Smooth kernels on dense point sets are numerically rank deficient, so the
    jitter is raised tenfold on failure up to ``max_jitter``.
    """
    if length_scale <= 0:
        raise ValueError("length_scale must be positive")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d2 = cdist(pts, pts, "sqeuclidean")
    base = np.exp(-d2 / (2.0 * length_scale**2))
    j = jitter
    while True:
        C = base.copy()
        C[np.diag_indices_from(C)] += j
        try:
            return scipy.linalg.cholesky(C, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            if j * 10 > max_jitter * (1 + 1e-12):
                raise np.linalg.LinAlgError(f"covariance not factorizable with jitter up to {max_jitter:g}") from None
            j *= 10


def sample_fields(factor: np.ndarray, count: int, seed: int, stream: int = 0, start: int = 0) -> np.ndarray:
    """``count`` raw fields L z, one row each; row i uses the stream keyed by index ``start + i``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    m = factor.shape[0]
    z = np.stack([rng_for(seed, stream, start + i).standard_normal(m) for i in range(count)])
    return z @ factor.T


def rescale_field(field, target_min: float, target_max: float) -> np.ndarray:
    """Affine map sending the sample's (min, max) onto (target_min, target_max)."""
    v = np.asarray(field, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full_like(v, 0.5 * (target_min + target_max))
    return target_min + (v - lo) * ((target_max - target_min) / (hi - lo))


def rescale_fields(fields, target_min: float, target_max: float, mode: str = "per_sample",
                   quantiles=(0.005, 0.995)) -> np.ndarray:
    """Rescale a stack of fields.

    ``per_sample`` maps each row's extremes onto the target interval. ``global_quantile``
    uses one affine map for the whole stack, fixed by pooled quantiles, and clips
    the tails into the interval.
    """
    fields = np.asarray(fields, dtype=np.float64)
    if mode == "per_sample":
        return np.stack([rescale_field(f, target_min, target_max) for f in fields])
    if mode == "global_quantile":
        lo, hi = np.quantile(fields, quantiles)
        out = target_min + (fields - lo) * ((target_max - target_min) / (hi - lo))
        return np.clip(out, target_min, target_max)
    raise ValueError(f"unknown rescale mode {mode!r}")
