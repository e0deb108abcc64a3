"""End-to-end workflow: empirical p-values, screening, tail fits, hybrid p-values.

Tests whose empirical p-value falls below the screening threshold get a GPD
tail approximation: threshold selection on the permutation tail, the SLLS
margin, a support-constrained fit, and ``p = (k/B) * survival(t_obs - u)``.
Every per-test failure degrades to the empirical p-value with source
``fallback_empirical``; nothing aborts the batch.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.special import digamma, gammaincc, polygamma

from .epsilon import (UNDERFLOW, RefineConfig, RefineResult, SllsConfig, StandardizedPosition,
                      compute_zcap, refine_tau, resolve_policy, slls_epsilon)
from .errors import ConfigurationError, EstimationError, PermTailError
from .estimators import EstimatorConfig, FitConstraint, fit_gpd
from .gof import AdResult, GofConfig
from .gpd import GpdParams, gpd_survival
from .threshold import (Selection, ThresholdConfig, ThresholdScan, candidate_grid, evaluate_candidate,
                        select_threshold)

THREADS_ENV = "PERMTAIL_THREADS"


class Tail(str, Enum):
    RIGHT = "right"
    LEFT = "left"
    TWO_SIDED = "two_sided"


class Source(str, Enum):
    EMPIRICAL = "empirical"
    GPD_CONSTRAINED = "gpd_constrained"
    GPD_UNCONSTRAINED = "gpd_unconstrained"
    GAMMA = "gamma"
    FALLBACK_EMPIRICAL = "fallback_empirical"
    INVALID = "invalid"


class TailModel(str, Enum):
    GPD = "gpd"
    GAMMA = "gamma"


@dataclass(frozen=True)
class PermutationTestData:
    """Observed statistics (length m) and a B x m permutation matrix."""

    t_obs: np.ndarray
    perms: np.ndarray
    tail: Tail = Tail.RIGHT

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.t_obs, dtype=float))
        P = np.asarray(self.perms, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        if P.ndim != 2 or P.shape[0] < 1 or t.ndim != 1 or t.size < 1:
            raise ConfigurationError("need at least one test and one permutation")
        if P.shape[1] != t.size:
            raise ConfigurationError(f"{t.size} observed statistics but {P.shape[1]} permutation columns")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(P))):
            raise ConfigurationError("statistics must be finite")
        object.__setattr__(self, "t_obs", t)
        object.__setattr__(self, "perms", P)
        object.__setattr__(self, "tail", Tail(self.tail))

    @property
    def B(self) -> int:
        return self.perms.shape[0]

    @property
    def m(self) -> int:
        return self.perms.shape[1]

    # moments are taken over sorted columns so that the row order cannot change a bit
    @property
    def perm_mean(self) -> np.ndarray:
        return np.sort(self.perms, axis=0).mean(axis=0)

    @property
    def perm_sd(self) -> np.ndarray:
        if self.B < 2:
            return np.zeros(self.m)
        return np.sort(self.perms, axis=0).std(axis=0, ddof=1)


def _tail_map(x: np.ndarray, tail: Tail) -> np.ndarray:
    if tail is Tail.LEFT:
        return -x
    if tail is Tail.TWO_SIDED:
        return np.abs(x)
    return x


def transform_tail(data: PermutationTestData, tail: Tail | str | None = None) -> PermutationTestData:
    """Map the statistics so that large values are extreme (right tail)."""
    tail = data.tail if tail is None else Tail(tail)
    return PermutationTestData(_tail_map(data.t_obs, tail), _tail_map(data.perms, tail), Tail.RIGHT)


def pow3_transform(data: PermutationTestData) -> PermutationTestData:
    """Cube every statistic; order preserving, so empirical p-values do not change."""
    return PermutationTestData(data.t_obs ** 3, data.perms ** 3, data.tail)


def empirical_pvalues(data: PermutationTestData, include_obs: bool = False) -> np.ndarray:
    """``(1 + #{T* >= T_obs}) / (1 + B)`` per test, after the tail transform.

    ``include_obs`` only affects the downstream tail fit (the observed value
    joins the permutation sample there); the empirical formula is unchanged.
    """
    d = transform_tail(data)
    counts = (d.perms >= d.t_obs[None, :]).sum(axis=0)
    return (1.0 + counts) / (1.0 + d.B)


def bh_adjust(pvals) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values in the input order."""
    p = np.asarray(pvals, dtype=float)
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    out = np.empty(m)
    out[order] = adj
    return out


def fit_gamma(x, max_iter: int = 100, tol: float = 1e-12) -> tuple[float, float]:
    """Gamma (shape, rate) maximum likelihood for positive data.

    Newton iteration on ``log a - digamma(a) = log(mean) - mean(log x)``.
    """
    x = np.asarray(x, dtype=float)
    mean = float(x.mean())
    s = math.log(mean) - float(np.log(x).mean())
    if not (math.isfinite(s) and s > 0):
        raise EstimationError("gamma shape equation has no solution", "gamma", {"s": s})
    a = (3.0 - s + math.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    for it in range(max_iter):
        f = math.log(a) - float(digamma(a)) - s
        fp = 1.0 / a - float(polygamma(1, a))
        a_new = a - f / fp
        if a_new <= 0:
            a_new = a / 2.0
        if abs(a_new - a) <= tol * a:
            return a_new, a_new / mean
        a = a_new
    raise EstimationError("Newton iteration did not converge", "gamma", {"iterations": max_iter, "shape": a})


def gamma_approx(perm_stats, t_obs: float) -> float:
    """Upper-tail probability of ``t_obs`` under a Gamma fit to all permutation values."""
    x = np.asarray(perm_stats, dtype=float)
    if x.size < 10:
        raise ConfigurationError("gamma fit needs at least 10 permutation values")
    shift = 0.0
    if np.min(x) <= 0:
        shift = -float(np.min(x)) + 1e-8
    a, rate = fit_gamma(x + shift)
    t = t_obs + shift
    if t <= 0:
        return 1.0
    return float(gammaincc(a, rate * t))


@dataclass(frozen=True)
class WorkflowConfig:
    """Settings for :func:`run_workflow`.

    ``p_thr=None`` screens at ``2 * alpha``. ``threads=None`` reads the
    ``PERMTAIL_THREADS`` environment variable (default 1).
    """

    alpha: float = 0.05
    p_thr: float | None = None
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    gof: GofConfig = field(default_factory=GofConfig)
    slls: SllsConfig = field(default_factory=SllsConfig)
    constrained: bool = True
    include_obs: bool = False
    model: TailModel = TailModel.GPD
    refine: bool = False
    refine_config: RefineConfig = field(default_factory=RefineConfig)
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "model", TailModel(self.model))
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.p_thr is not None and not 0 < self.p_thr <= 1:
            raise ConfigurationError("p_thr must lie in (0, 1]")
        if self.threads is not None and self.threads < 1:
            raise ConfigurationError("threads must be at least 1")
        if self.constrained and self.estimator.method.value == "MOM" and self.model is TailModel.GPD:
            raise ConfigurationError("MOM cannot enforce the support constraint; use --unconstrained or "
                                     "another estimator")

    @property
    def screen(self) -> float:
        return 2.0 * self.alpha if self.p_thr is None else self.p_thr

    @property
    def n_threads(self) -> int:
        if self.threads is not None:
            return self.threads
        raw = os.environ.get(THREADS_ENV, "").strip()
        if not raw:
            return 1
        try:
            n = int(raw)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
        return n


@dataclass(frozen=True)
class TailFit:
    u: float
    k: int
    p_exc: float
    y_obs: float
    epsilon: float | None
    params: GpdParams
    ad: AdResult
    constrained: bool
    p_tail: float


@dataclass(frozen=True)
class PValueRecord:
    test_id: str
    t_obs: float
    p_emp: float
    p_tail: float | None
    p_hybrid: float
    source: Source
    p_bh: float = math.nan
    u: float | None = None
    k: int | None = None
    sigma_hat: float | None = None
    xi_hat: float | None = None
    epsilon: float | None = None
    ad_pvalue: float | None = None


@dataclass(frozen=True)
class _TestContext:
    """Everything one tail approximation needs (right-tailed, sorted)."""

    index: int
    sorted_perms: np.ndarray
    t_obs: float
    B: int
    z_obs: float
    perm_sd: float


@dataclass
class WorkflowResult:
    records: list[PValueRecord]
    tau: float
    refine: RefineResult | None = None


class _Fallback(Exception):
    pass


def _prepare(data: PermutationTestData, config: WorkflowConfig):
    """Right-tailed sorted samples plus standardized positions per test."""
    mu, sd = data.perm_mean, data.perm_sd
    d = transform_tail(data)
    with np.errstate(divide="ignore", invalid="ignore"):
        z_obs = np.abs(data.t_obs - mu) / sd
        perm_z = _tail_map((data.perms - mu) / sd, data.tail)
    return d, mu, sd, z_obs, perm_z


def _select(ctx: _TestContext, config: WorkflowConfig) -> Selection | None:
    S = ctx.sorted_perms
    ks = candidate_grid(S, ctx.t_obs, config.threshold)
    scan = ThresholdScan(ks, lambda k: evaluate_candidate(S, k, config.estimator, config.gof, config.seed,
                                                          (ctx.index,)))
    return select_threshold(scan, config.threshold)


def _final_fit(ctx: _TestContext, sel: Selection, config: WorkflowConfig, slls: SllsConfig,
               z_cap: float) -> TailFit:
    S = ctx.sorted_perms
    u = sel.u
    start = int(np.searchsorted(S, u, side="right"))
    excesses = S[start:] - u
    k = excesses.size
    y_obs = ctx.t_obs - u
    eps = None
    if config.constrained:
        pos = StandardizedPosition.from_z(ctx.z_obs, z_cap)
        eps = slls_epsilon(pos, slls, ctx.perm_sd)
        params = fit_gpd(excesses, config.estimator, FitConstraint.at(y_obs + eps))
    else:
        params = sel.fit.params
    p_exc = k / ctx.B
    p_tail = p_exc * float(gpd_survival(y_obs, params))
    ad = AdResult(sel.fit.a2, sel.fit.ad_pvalue, config.gof.mode)
    return TailFit(u, k, p_exc, y_obs, eps, params, ad, config.constrained, p_tail)


def approximate_tail(ctx: _TestContext, config: WorkflowConfig, z_cap: float,
                     slls: SllsConfig | None = None) -> tuple[TailFit | None, Selection | None]:
    """Threshold selection, margin and final fit for one screened test.

    Returns ``(None, None)`` when no candidate qualifies or anything fails.
    """
    try:
        sel = _select(ctx, config)
        if sel is None:
            return None, None
        return _final_fit(ctx, sel, config, slls or config.slls, z_cap), sel
    except (PermTailError, FloatingPointError, ValueError):
        return None, None


def _context(d: PermutationTestData, j: int, z_obs, sd, include_obs: bool) -> _TestContext:
    col = d.perms[:, j]
    if include_obs:
        col = np.append(col, d.t_obs[j])
    return _TestContext(j, np.sort(col), float(d.t_obs[j]), d.B, float(z_obs[j]), float(sd[j]))


def _record_from_fit(test_id: str, t_obs: float, p_emp: float, fit: TailFit) -> PValueRecord:
    source = Source.GPD_CONSTRAINED if fit.constrained else Source.GPD_UNCONSTRAINED
    return PValueRecord(test_id, t_obs, p_emp, fit.p_tail, fit.p_tail, source, u=fit.u, k=fit.k,
                        sigma_hat=fit.params.sigma, xi_hat=fit.params.xi, epsilon=fit.epsilon,
                        ad_pvalue=fit.ad.p_value)


def run_workflow_detailed(data: PermutationTestData, config: WorkflowConfig = WorkflowConfig(),
                          test_ids=None) -> WorkflowResult:
    """Run the full workflow and report the final plateau factor tau."""
    m = data.m
    ids = [str(i) for i in range(m)] if test_ids is None else [str(t) for t in test_ids]
    if len(ids) != m:
        raise ConfigurationError(f"{len(ids)} test ids for {m} tests")
    p_emp = empirical_pvalues(data)
    screened = np.flatnonzero(p_emp < config.screen)
    records: list[PValueRecord] = [PValueRecord(ids[j], float(data.t_obs[j]), float(p_emp[j]), None,
                                                float(p_emp[j]), Source.EMPIRICAL) for j in range(m)]
    tau = config.slls.tau
    refine_result = None
    if screened.size:
        d, mu, sd, z_obs, perm_z = _prepare(data, config)
        if config.model is TailModel.GAMMA:
            for j in screened:
                try:
                    p = gamma_approx(d.perms[:, j], float(d.t_obs[j]))
                    records[j] = replace(records[j], p_tail=p, p_hybrid=p, source=Source.GAMMA)
                except PermTailError:
                    records[j] = replace(records[j], source=Source.FALLBACK_EMPIRICAL)
        else:
            z_cap = math.nan
            if config.constrained:
                try:
                    policy = resolve_policy(config.slls.zcap_policy, m)
                    z_cap = compute_zcap(z_obs[np.isfinite(z_obs)], perm_z, policy, config.slls.zcap_quantile)
                except PermTailError:
                    z_cap = math.nan
            contexts = [_context(d, j, z_obs, sd, config.include_obs) for j in screened]

            def work(ctx):
                if config.constrained and not (math.isfinite(z_cap) and math.isfinite(ctx.z_obs)):
                    return None, None
                return approximate_tail(ctx, config, z_cap)

            n_threads = config.n_threads
            if n_threads > 1 and len(contexts) > 1:
                with ThreadPoolExecutor(max_workers=n_threads) as pool:
                    results = list(pool.map(work, contexts))
            else:
                results = [work(c) for c in contexts]
            selections = {}
            for ctx, (fit, sel) in zip(contexts, results):
                j = ctx.index
                if fit is None:
                    records[j] = replace(records[j], source=Source.FALLBACK_EMPIRICAL)
                else:
                    records[j] = _record_from_fit(ids[j], float(data.t_obs[j]), float(p_emp[j]), fit)
                    selections[j] = (ctx, sel)

            if config.refine and config.constrained and selections:
                tau, refine_result = _refine(records, selections, config, z_cap)

    p_bh = bh_adjust([r.p_hybrid for r in records])
    records = [replace(r, p_bh=float(b)) for r, b in zip(records, p_bh)]
    return WorkflowResult(records, tau, refine_result)


def _refine(records, selections, config: WorkflowConfig, z_cap: float):
    tests = np.array(sorted(selections), dtype=int)
    p_now = np.array([records[j].p_hybrid for j in tests])
    cache: dict[tuple[float, int], TailFit | None] = {}

    def fit_at(tau: float, j: int) -> TailFit | None:
        key = (tau, int(j))
        if key not in cache:
            ctx, sel = selections[int(j)]
            try:
                cache[key] = _final_fit(ctx, sel, config, config.slls.with_tau(tau), z_cap)
            except (PermTailError, FloatingPointError, ValueError):
                cache[key] = None
        return cache[key]

    def refit(tau: float, idx) -> np.ndarray:
        out = []
        for j in idx:
            fit = fit_at(tau, j)
            # a failed refit keeps the test flagged so the search moves on
            out.append(0.0 if fit is None else fit.p_tail)
        return np.array(out)

    result = refine_tau(refit, tests, p_now, config.slls.tau, config.refine_config)
    if result.n_refits == 0:
        return config.slls.tau, result
    for j in tests:
        fit = fit_at(result.tau, j)
        if fit is None:
            records[j] = replace(records[j], p_tail=None, p_hybrid=records[j].p_emp, source=Source.FALLBACK_EMPIRICAL,
                                 u=None, k=None, sigma_hat=None, xi_hat=None, epsilon=None, ad_pvalue=None)
        else:
            records[j] = _record_from_fit(records[j].test_id, records[j].t_obs, records[j].p_emp, fit)
    return result.tau, result


def run_workflow(data: PermutationTestData, config: WorkflowConfig = WorkflowConfig(),
                 test_ids=None) -> list[PValueRecord]:
    """Hybrid p-values for every test, in input order."""
    return run_workflow_detailed(data, config, test_ids).records


def underflow_count(records) -> int:
    return sum(1 for r in records if r.p_hybrid <= UNDERFLOW)
