"""Generalized Pareto distribution in the (scale, shape) parametrization.

F(y) = 1 - (1 + xi*y/sigma)^(-1/xi) for y >= 0, with the exponential limit at
xi = 0. For xi < 0 the support ends at ``-sigma/xi``.

Tail probabilities are computed on the log scale so that survival values far
below 1e-300 stay representable; ``1 - cdf`` is never used for the tail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._rng import make_rng
from .errors import ParameterDomainError

#: Below this |xi| the exponential branch (with a first-order xi term) is used.
XI_SWITCH = 1e-8


@dataclass(frozen=True)
class GpdParams:
    sigma: float
    xi: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ParameterDomainError(f"GPD scale must be positive and finite, got {self.sigma!r}")
        if not math.isfinite(self.xi):
            raise ParameterDomainError(f"GPD shape must be finite, got {self.xi!r}")

    @property
    def boundary(self) -> float:
        """Upper support endpoint; ``inf`` unless xi < 0."""
        if self.xi < 0:
            return -self.sigma / self.xi
        return math.inf


def _as_nonneg(y) -> np.ndarray:
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ParameterDomainError("GPD argument must be non-negative")
    return arr


def log_survival(y, sigma: float, xi: float) -> np.ndarray:
    """Elementwise log(1 - F(y)) without range checks; -inf beyond the support."""
    z = np.asarray(y, dtype=float) / sigma
    if abs(xi) < XI_SWITCH:
        out = -z + 0.5 * xi * z * z
        if xi < 0:
            out = np.where(z >= -1.0 / xi, -np.inf, out)
        return out
    t = xi * z
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -np.log1p(t) / xi
    return np.where(t <= -1.0, -np.inf, out)


def gpd_log_survival(y, params: GpdParams):
    arr = _as_nonneg(y)
    return log_survival(arr, params.sigma, params.xi)[()]


def gpd_survival(y, params: GpdParams):
    """Upper tail probability; exactly zero only at or beyond a finite endpoint."""
    arr = _as_nonneg(y)
    return np.exp(log_survival(arr, params.sigma, params.xi))[()]


def gpd_cdf(y, params: GpdParams):
    arr = _as_nonneg(y)
    return (-np.expm1(log_survival(arr, params.sigma, params.xi)))[()]


def gpd_logpdf(y, params: GpdParams):
    """Log-density; -inf outside the support."""
    arr = _as_nonneg(y)
    sigma, xi = params.sigma, params.xi
    z = arr / sigma
    if abs(xi) < XI_SWITCH:
        out = -math.log(sigma) - (z + xi * (z - 0.5 * z * z))
        if xi < 0:
            out = np.where(z >= -1.0 / xi, -np.inf, out)
        return out[()]
    t = xi * z
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -math.log(sigma) - (1.0 + 1.0 / xi) * np.log1p(t)
    return np.where(t <= -1.0, -np.inf, out)[()]


def quantile(p, sigma: float, xi: float) -> np.ndarray:
    """Inverse CDF without argument checks (vectorized over ``p``)."""
    lq = np.log1p(-np.asarray(p, dtype=float))  # log(1 - p) <= 0
    if abs(xi) < XI_SWITCH:
        return sigma * (-lq) * (1.0 - 0.5 * xi * lq)
    return sigma * np.expm1(-xi * lq) / xi


def gpd_quantile(p, params: GpdParams):
    arr = np.asarray(p, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0) or np.any(arr >= 1):
        raise ParameterDomainError("quantile level must lie in [0, 1)")
    return quantile(arr, params.sigma, params.xi)[()]


def gpd_sample(n: int, params: GpdParams, rng_seed: int) -> np.ndarray:
    """``n`` i.i.d. draws by inverse CDF of Philox uniforms."""
    if n < 1:
        raise ParameterDomainError("sample size must be at least 1")
    u = make_rng(rng_seed).random(n)
    return quantile(u, params.sigma, params.xi)


def gpd_loglik(excesses, params: GpdParams) -> float:
    """Log-likelihood of ``excesses``; ``-inf`` if any point is outside the support."""
    y = np.asarray(excesses, dtype=float)
    if y.size == 0:
        raise ParameterDomainError("log-likelihood needs at least one excess")
    ll = np.sum(gpd_logpdf(y, params))
    return float(ll)
