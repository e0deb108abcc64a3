"""Safety margin for the support constraint (SLLS rule) and tau refinement.

The margin is built on a standardized scale: the observed statistic's
position ``l = min(Z_obs / Z_cap, 1)`` drives a log-saturating curve plus a
compactly supported Wendland lift, and the result is rescaled by the
permutation standard deviation. Curvature and plateau scale with
``n_ref / n_eff``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateDistributionError, PermTailError

#: Smallest positive normal double; p-values at or below it count as underflow.
UNDERFLOW = float(np.finfo(np.float64).tiny)
GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


class ZcapPolicy(str, Enum):
    AUTO = "auto"
    MAX_OVER_TESTS = "max_over_tests"
    PERM_QUANTILE = "perm_quantile"


@dataclass(frozen=True)
class SllsConfig:
    """Tuning constants of the SLLS margin.

    ``n_eff`` is the per-group sample size (``min(n1, n2)``); ``None`` means it
    is unknown and the reference size is used, which leaves the curve at its
    reference shape.
    """

    kappa_factor: float = 1000.0
    tau: float = 0.25
    rho_lift: float = 0.025
    eps_min: float = 1e-6
    n_ref: int = 500
    n_eff: int | None = None
    zcap_policy: ZcapPolicy = ZcapPolicy.AUTO
    zcap_quantile: float = 0.999

    def __post_init__(self):
        object.__setattr__(self, "zcap_policy", ZcapPolicy(self.zcap_policy))
        for name in ("kappa_factor", "tau", "eps_min"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not self.rho_lift >= 0:
            raise ConfigurationError("rho_lift must be non-negative")
        if self.n_ref < 1 or (self.n_eff is not None and self.n_eff < 1):
            raise ConfigurationError("sample sizes must be at least 1")
        if not 0 < self.zcap_quantile < 1:
            raise ConfigurationError("zcap_quantile must lie in (0, 1)")

    @property
    def scale(self) -> float:
        return self.n_ref / (self.n_eff if self.n_eff is not None else self.n_ref)

    @property
    def kappa(self) -> float:
        return self.kappa_factor * self.scale

    @property
    def eps_star_max(self) -> float:
        return self.tau * self.scale

    def with_tau(self, tau: float) -> "SllsConfig":
        return SllsConfig(self.kappa_factor, tau, self.rho_lift, self.eps_min, self.n_ref, self.n_eff,
                          self.zcap_policy, self.zcap_quantile)


@dataclass(frozen=True)
class StandardizedPosition:
    z_obs: float
    z_cap: float
    l: float

    @classmethod
    def from_z(cls, z_obs: float, z_cap: float) -> "StandardizedPosition":
        if not z_cap > 0:
            raise ConfigurationError("Z_cap must be positive")
        if not z_obs >= 0:
            raise ConfigurationError("Z_obs must be non-negative")
        return cls(z_obs, z_cap, min(z_obs / z_cap, 1.0))


def wendland(l: float) -> float:
    """Wendland C2 kernel (1 - l)^4 (1 + 4l) on [0, 1]."""
    if not 0.0 <= l <= 1.0:
        warnings.warn(f"Wendland argument {l!r} outside [0, 1]; clamped", RuntimeWarning, stacklevel=2)
        l = min(max(l, 0.0), 1.0)
    return (1.0 - l) ** 4 * (1.0 + 4.0 * l)


def eps_star(l: float, cfg: SllsConfig) -> float:
    """Standardized margin at position ``l``."""
    kappa = cfg.kappa
    sat = cfg.eps_star_max * (math.log1p(kappa * l) / math.log1p(kappa))  # ratio is exactly 1 at l = 1
    return max(sat + cfg.rho_lift * wendland(l), cfg.eps_min)


def slls_epsilon(pos: StandardizedPosition, cfg: SllsConfig, perm_sd: float) -> float:
    """Margin on the scale of the test statistic."""
    if not (math.isfinite(perm_sd) and perm_sd > 0):
        raise DegenerateDistributionError("permutation standard deviation is zero; margin undefined")
    return perm_sd * eps_star(pos.l, cfg)


def resolve_policy(policy: ZcapPolicy | str, n_tests: int) -> ZcapPolicy:
    policy = ZcapPolicy(policy)
    if policy is ZcapPolicy.AUTO:
        return ZcapPolicy.PERM_QUANTILE if n_tests == 1 else ZcapPolicy.MAX_OVER_TESTS
    return policy


def compute_zcap(all_z_obs: Sequence[float], perm_z, policy: ZcapPolicy | str = ZcapPolicy.AUTO,
                 q: float = 0.999) -> float:
    """Common reference cap for the standardized position.

    Args:
        all_z_obs: standardized observed statistics of all tests.
        perm_z: standardized permutation values (pooled over tests).
        policy: ``max_over_tests``, ``perm_quantile``, or ``auto`` (the
            quantile cap for a single test, the maximum otherwise).
        q: quantile level for the permutation cap.
    """
    z_obs = np.asarray(all_z_obs, dtype=float).ravel()
    policy = resolve_policy(policy, z_obs.size)
    if policy is ZcapPolicy.MAX_OVER_TESTS:
        if z_obs.size == 0:
            raise ConfigurationError("max_over_tests cap needs at least one observed statistic")
        cap = float(np.max(z_obs))
    else:
        pz = np.asarray(perm_z, dtype=float).ravel()
        pz = pz[np.isfinite(pz)]
        if pz.size == 0:
            raise ConfigurationError("perm_quantile cap needs standardized permutation values")
        cap = float(np.quantile(pz, q))
    if not cap > 0:
        raise DegenerateDistributionError(f"Z_cap must be positive, got {cap!r}")
    return cap


@dataclass(frozen=True)
class RefineConfig:
    step_init: float = 10.0
    growth: float = GOLDEN
    max_expand: int = 20
    tol: float = 0.1
    max_bisect: int = 30

    def __post_init__(self):
        if not (self.step_init > 0 and self.growth >= 1 and self.tol > 0):
            raise ConfigurationError("invalid tau refinement settings")


@dataclass
class RefineResult:
    tau: float
    pvalues: np.ndarray
    converged: bool
    n_refits: int
    history: list[tuple[float, int]] = field(default_factory=list)


class RefitError(PermTailError):
    """A refit callback failed during the tau search."""


def _underflows(p) -> np.ndarray:
    return np.asarray(p, dtype=float) <= UNDERFLOW


def refine_tau(refit: Callable[[float, np.ndarray], np.ndarray], tests, pvalues, tau0: float,
               cfg: RefineConfig = RefineConfig()) -> RefineResult:
    """Smallest plateau factor tau that removes machine-underflow p-values.

    Phase 1 raises tau additively with geometrically growing steps until no
    refitted test underflows; phase 2 bisects the last bracket. Only tests that
    underflow at ``tau0`` are refitted during the search, then every test in
    ``tests`` is refitted once at the selected tau.

    Args:
        refit: ``refit(tau, idx)`` returns p-values for the test indices ``idx``.
        tests: indices of the tail-approximated tests.
        pvalues: their p-values at ``tau0`` (same order as ``tests``).
        tau0: starting plateau factor.
        cfg: search settings.
    """
    tests = np.asarray(tests, dtype=int)
    p0 = np.asarray(pvalues, dtype=float)
    under = tests[_underflows(p0)]
    if under.size == 0:
        return RefineResult(tau0, p0.copy(), True, 0)

    n_refits = 0
    history: list[tuple[float, int]] = []

    def count_under(tau: float) -> int:
        nonlocal n_refits
        try:
            p = refit(tau, under)
        except Exception as exc:
            raise RefitError(f"refit failed at tau={tau!r}: {exc}") from exc
        n_refits += under.size
        n = int(_underflows(p).sum())
        history.append((tau, n))
        return n

    lo, step, hi = tau0, cfg.step_init, None
    for _ in range(cfg.max_expand):
        tau = lo + step
        if count_under(tau) == 0:
            hi = tau
            break
        lo, step = tau, step * cfg.growth
    converged = hi is not None
    if hi is None:
        best = min(history, key=lambda h: (h[1], h[0]))
        warnings.warn(f"tau refinement stopped after {cfg.max_expand} expansions with "
                      f"{best[1]} underflowing tests; using tau={best[0]!r}", RuntimeWarning, stacklevel=2)
        tau_star = best[0]
    else:
        for _ in range(cfg.max_bisect):
            if hi - lo <= cfg.tol:
                break
            mid = 0.5 * (lo + hi)
            if count_under(mid) == 0:
                hi = mid
            else:
                lo = mid
        tau_star = hi
    try:
        final = np.asarray(refit(tau_star, tests), dtype=float)
    except Exception as exc:
        raise RefitError(f"refit failed at tau={tau_star!r}: {exc}") from exc
    return RefineResult(tau_star, final, converged, n_refits, history)
