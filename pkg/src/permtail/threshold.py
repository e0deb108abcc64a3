"""Threshold selection for the permutation tail.

Candidates are exceedance counts ``k0, k0 - step, ...`` scanned from the
lowest threshold upward. The threshold implied by a count ``k`` is the
``(B - k)``-th order statistic of the permutation values; exceedances are the
values strictly above it. Every candidate is fitted without the support
constraint and scored with the Anderson-Darling test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import ConfigurationError, PermTailError
from .estimators import EstimatorConfig, fit_gpd
from .gof import GofConfig, ad_test
from .gpd import GpdParams

P_CLAMP = 1.0 - 1e-12
CHANGEPOINT_PREPEND = 5
CHANGEPOINT_PREPEND_VALUE = 1e-6
SHAPE_WINDOW = 5


class ThresholdMethod(str, Enum):
    FTR = "FTR"
    ROBFTR = "robFTR"
    FORWARD_STOP = "ForwardStop"
    GOF_CHANGEPOINT = "GofChangepoint"
    SHAPE_VARIATION = "ShapeVariation"


@dataclass(frozen=True)
class ThresholdConfig:
    """Threshold search settings.

    ``k0`` is ``max(ceil(k0_fraction * B), k0_floor)`` capped at ``B - 1``
    (a count of ``B`` would leave no order statistic to serve as threshold).
    ``step=None`` means 10 for the FTR rules and 1 otherwise.
    """

    method: ThresholdMethod = ThresholdMethod.ROBFTR
    k0_fraction: float = 0.25
    k0_floor: int = 250
    step: int | None = None
    min_exceedances: int = 30
    gof_alpha: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "method", ThresholdMethod(self.method))
        if not 0 <= self.k0_fraction <= 1:
            raise ConfigurationError("k0_fraction must lie in [0, 1]")
        if self.k0_floor < 0:
            raise ConfigurationError("k0_floor must be non-negative")
        if self.step is not None and self.step < 1:
            raise ConfigurationError("step must be at least 1")
        if self.min_exceedances < 5:
            raise ConfigurationError("min_exceedances must be at least 5")
        if not 0 < self.gof_alpha < 1:
            raise ConfigurationError("gof_alpha must lie in (0, 1)")

    @property
    def step_size(self) -> int:
        if self.step is not None:
            return self.step
        return 10 if self.method in (ThresholdMethod.FTR, ThresholdMethod.ROBFTR) else 1

    def k0(self, B: int) -> int:
        return min(max(math.ceil(self.k0_fraction * B - 1e-9), self.k0_floor), B - 1)


@dataclass(frozen=True)
class CandidateFit:
    k: int
    u: float
    n_exceed: int
    params: GpdParams | None
    a2: float
    ad_pvalue: float

    def accepted(self, alpha: float) -> bool:
        return self.params is not None and self.ad_pvalue >= alpha


@dataclass(frozen=True)
class CandidateScan:
    ks: list[int]
    ad_pvalues: list[float]
    xi_hats: list[float]


@dataclass(frozen=True)
class Selection:
    index: int
    fit: CandidateFit

    @property
    def k(self) -> int:
        return self.fit.n_exceed

    @property
    def u(self) -> float:
        return self.fit.u


def _threshold(sorted_perms: np.ndarray, k: int) -> float:
    return float(sorted_perms[len(sorted_perms) - k - 1])


def candidate_grid(perm_stats, t_obs: float, config: ThresholdConfig = ThresholdConfig()) -> list[int]:
    """Admissible exceedance counts in scan order.

    A count is kept when its threshold lies strictly below ``t_obs`` and at
    least ``min_exceedances`` values lie strictly above the threshold.
    """
    S = np.sort(np.asarray(perm_stats, dtype=float))
    B = S.size
    if B < config.min_exceedances + 1:
        return []
    ks = []
    for k in range(config.k0(B), config.min_exceedances - 1, -config.step_size):
        u = _threshold(S, k)
        if not u < t_obs:
            continue
        n_exc = B - int(np.searchsorted(S, u, side="right"))
        if n_exc >= config.min_exceedances:
            ks.append(k)
    return ks


def evaluate_candidate(sorted_perms: np.ndarray, k: int, estimator: EstimatorConfig, gof: GofConfig,
                       rng_seed: int, stream: tuple[int, ...] = ()) -> CandidateFit:
    """Unconstrained fit plus AD p-value at the threshold implied by ``k``."""
    u = _threshold(sorted_perms, k)
    start = int(np.searchsorted(sorted_perms, u, side="right"))
    excesses = sorted_perms[start:] - u
    try:
        params = fit_gpd(excesses, estimator)
        ad = ad_test(excesses, params, gof, estimator, rng_seed, stream + (k,))
    except (PermTailError, FloatingPointError):
        return CandidateFit(k, u, excesses.size, None, math.nan, math.nan)
    return CandidateFit(k, u, excesses.size, params, ad.a2, ad.p_value)


@dataclass
class ThresholdScan:
    """Lazily evaluated candidate fits for one test.

    ``evaluate`` maps an exceedance count to its :class:`CandidateFit`; results
    are cached so the early-stopping rules fit only what they inspect.
    """

    ks: list[int]
    evaluate: Callable[[int], CandidateFit]
    _cache: dict[int, CandidateFit] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.ks)

    def __getitem__(self, i: int) -> CandidateFit:
        k = self.ks[i]
        if k not in self._cache:
            self._cache[k] = self.evaluate(k)
        return self._cache[k]

    @property
    def n_evaluated(self) -> int:
        return len(self._cache)

    def full(self) -> CandidateScan:
        fits = [self[i] for i in range(len(self))]
        return CandidateScan([f.k for f in fits], [f.ad_pvalue for f in fits],
                             [f.params.xi if f.params else math.nan for f in fits])


def forward_stop_index(pvals, alpha: float) -> int | None:
    """Smallest 1-based index k with mean(-log(1 - p_1..p_k)) > alpha."""
    p = np.minimum(np.asarray(pvals, dtype=float), P_CLAMP)
    if p.size == 0:
        return None
    ybar = np.cumsum(-np.log1p(-p)) / np.arange(1, p.size + 1)
    hits = np.flatnonzero(ybar > alpha)
    return int(hits[0]) + 1 if hits.size else None


def pelt_mean_changepoints(seq, penalty: float, min_seg: int = 2) -> list[int]:
    """Optimal mean-shift segmentation under squared-error cost (PELT).

    Returns the start indices of every segment after the first.
    """
    x = np.asarray(seq, dtype=float)
    n = x.size
    if n < 2:
        raise ConfigurationError("changepoint detection needs at least 2 values")
    c1 = np.concatenate([[0.0], np.cumsum(x)])
    c2 = np.concatenate([[0.0], np.cumsum(x * x)])

    def cost(s, t):
        m = t - s
        return c2[t] - c2[s] - (c1[t] - c1[s]) ** 2 / m

    F = np.full(n + 1, np.inf)
    F[0] = -penalty
    last = np.zeros(n + 1, dtype=int)
    candidates: dict[int, int | None] = {0: None}  # start -> time it was found dominated
    for t in range(min_seg, n + 1):
        # a start dominated at time p is only safe to drop once a segment (p, t] is long enough
        candidates = {s: p for s, p in candidates.items() if p is None or t < p + min_seg}
        usable = [s for s in candidates if t - s >= min_seg]
        vals = [F[s] + cost(s, t) + penalty for s in usable]
        if vals:
            j = int(np.argmin(vals))
            F[t], last[t] = vals[j], usable[j]
        for s, p in candidates.items():
            if p is None and t - s >= min_seg and F[s] + cost(s, t) > F[t]:
                candidates[s] = t
        if t - min_seg + 1 >= min_seg:
            candidates[t - min_seg + 1] = None
    cps = []
    t = n
    while t > 0:
        s = last[t]
        if s > 0:
            cps.append(int(s))
        t = s
    return sorted(cps)


def _first_robust(scan: ThresholdScan, alpha: float, run: int) -> int | None:
    i = 0
    while i + run <= len(scan):
        for j in range(run):
            if not scan[i + j].accepted(alpha):
                i = i + j + 1
                break
        else:
            return i
    return None


def _changepoint(scan: ThresholdScan, alpha: float) -> int | None:
    pvals = np.array([scan[i].ad_pvalue for i in range(len(scan))])
    pvals = np.nan_to_num(pvals, nan=0.0)
    seq = np.concatenate([np.full(CHANGEPOINT_PREPEND, CHANGEPOINT_PREPEND_VALUE), pvals])
    var = float(np.var(seq, ddof=1))
    if var > 0:
        cps = pelt_mean_changepoints(seq, 2.0 * math.log(seq.size) * var)
    else:
        cps = []
    start = max(cps[0] - CHANGEPOINT_PREPEND, 0) if cps else 0
    for i in range(start, len(scan)):
        if scan[i].accepted(alpha):
            return i
    return None


def _shape_variation(scan: ThresholdScan, alpha: float) -> int | None:
    acc = [i for i in range(len(scan)) if scan[i].accepted(alpha)]
    if len(acc) < SHAPE_WINDOW:
        return None
    xi = np.array([scan[i].params.xi for i in acc])
    windows = np.lib.stride_tricks.sliding_window_view(xi, SHAPE_WINDOW)
    best = int(np.argmin(windows.var(axis=1)))
    return acc[best + SHAPE_WINDOW // 2]


def select_threshold(scan: ThresholdScan, config: ThresholdConfig = ThresholdConfig()) -> Selection | None:
    """Apply the configured rule; ``None`` when no candidate qualifies."""
    if len(scan) == 0:
        return None
    alpha = config.gof_alpha
    method = config.method
    if method is ThresholdMethod.FTR:
        idx = _first_robust(scan, alpha, 1)
    elif method is ThresholdMethod.ROBFTR:
        idx = _first_robust(scan, alpha, 3)
    elif method is ThresholdMethod.FORWARD_STOP:
        pvals = np.nan_to_num([scan[i].ad_pvalue for i in range(len(scan))], nan=0.0)
        pos = forward_stop_index(pvals, alpha)
        idx = None if pos is None else pos - 1
        if idx is not None and scan[idx].params is None:
            idx = None
    elif method is ThresholdMethod.GOF_CHANGEPOINT:
        idx = _changepoint(scan, alpha)
    else:
        idx = _shape_variation(scan, alpha)
    return None if idx is None else Selection(idx, scan[idx])
