"""Median smoothing bounds for feature predictors under l2 perturbations.

For a percentile-smoothed predictor, an l2 perturbation of size ``eps`` can
move the ``p``-th percentile only between the percentiles
``Phi(Phi^-1(p) - eps/sigma)`` and ``Phi(Phi^-1(p) + eps/sigma)``. We estimate
those percentiles from Gaussian samples and read them off as order statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bounds import BoxBounds
from .nn import MlpParams, forward


class SmoothingRangeError(ValueError):
    """Requested percentile lies beyond what the sample count can resolve."""


@dataclass(frozen=True)
class SmoothingConfig:
    sigma: float = 0.05
    n_samples: int = 2000
    seed: int = 0
    # extra order-statistic margin as a finite-sample correction; 0 uses the plain bound
    index_offset: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.n_samples < 100:
            raise ValueError("n_samples must be at least 100")
        if self.index_offset < 0:
            raise ValueError("index_offset must be non-negative")


_SQRT2 = math.sqrt(2.0)

# Acklam's rational approximation to the normal quantile (relative error ~1e-9),
# followed by one Halley step against the erfc-based CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def phi(x: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-x / _SQRT2)


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log1p(-p))
        return -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
        (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)


def phi_inv(p: float) -> float:
    """Standard normal quantile for ``p`` in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"phi_inv needs p in (0, 1), got {p!r}")
    x = _acklam(p)
    # Halley refinement; use the upper tail directly to keep precision near 1
    if p > 0.5:
        e = 0.5 * math.erfc(x / _SQRT2) - (1.0 - p)
        e = -e
    else:
        e = phi(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def shifted_percentiles(eps: float, sigma: float, p: float = 0.5) -> tuple[float, float]:
    z = phi_inv(p)
    return phi(z - eps / sigma), phi(z + eps / sigma)


@lru_cache(maxsize=16)
def _noise(seed: int, n: int, dim: int, sigma: float) -> np.ndarray:
    # row i depends only on (seed, i), so any partition of the rows reproduces it
    rows = [np.random.default_rng([seed, i]).standard_normal(dim) for i in range(n)]
    out = sigma * np.stack(rows)
    out.setflags(write=False)
    return out


def gaussian_noise(cfg: SmoothingConfig, dim: int) -> np.ndarray:
    return _noise(cfg.seed, cfg.n_samples, dim, float(cfg.sigma))


class SmoothedPredictor:
    """Sorted noisy outputs of ``g`` around one observation.

    Built once per observation; bounds for any number of radii are then just
    order-statistic lookups.
    """

    def __init__(self, g: MlpParams, o: np.ndarray, cfg: SmoothingConfig):
        self.cfg = cfg
        o = np.asarray(o, dtype=np.float64)
        samples = forward(g, o + gaussian_noise(cfg, o.shape[-1]))
        self.sorted = np.sort(samples, axis=0)

    @property
    def median(self) -> np.ndarray:
        return np.median(self.sorted, axis=0)

    def indices(self, eps: float) -> tuple[int, int]:
        if eps < 0:
            raise ValueError("eps must be non-negative")
        n = self.cfg.n_samples
        p_lo, p_hi = shifted_percentiles(eps, self.cfg.sigma)
        if n * p_lo < 1.0 or n * (1.0 - p_hi) < 1.0:
            raise SmoothingRangeError(
                f"eps={eps:g} needs percentiles ({p_lo:.3g}, {p_hi:.3g}) beyond {n} samples")
        i_lo = max(math.floor(n * p_lo) - self.cfg.index_offset, 0)
        i_hi = min(math.ceil(n * p_hi) - 1 + self.cfg.index_offset, n - 1)
        return min(i_lo, i_hi), max(i_lo, i_hi)

    def bounds(self, eps: float) -> BoxBounds:
        i_lo, i_hi = self.indices(eps)
        return BoxBounds(self.sorted[i_lo].copy(), self.sorted[i_hi].copy())


def median_smooth_bounds(g: MlpParams, o: np.ndarray, eps: float,
                         cfg: SmoothingConfig = SmoothingConfig()) -> BoxBounds:
    return SmoothedPredictor(g, o, cfg).bounds(eps)
