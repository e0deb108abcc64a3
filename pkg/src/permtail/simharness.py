"""Simulation scenarios, comparator runs and estimator benchmarks.

Two permutation scenarios are provided, each with a parametric reference
p-value:

* ``gaussian_ttest``: N(0, 1) versus N(d, 1), pooled two-sample t statistic,
  reference two-sided Student t with 2n - 2 degrees of freedom.
* ``exponential_wilcoxon``: exponential means 1 and 1 + d, Mann-Whitney U
  (centred at n^2/2), reference two-sided normal approximation with
  continuity correction (exact distribution for n <= 10).

Every replicate draws from its own Philox stream keyed by ``(seed, rep)``.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from ._rng import make_rng
from .epsilon import SllsConfig
from .errors import ConfigurationError, PermTailError
from .estimators import EstimatorConfig, Method, fit_gpd_batch
from .gof import GofConfig
from .gpd import quantile
from .io import fmt_float
from .pipeline import PermutationTestData, PValueRecord, Tail, TailModel, WorkflowConfig, pow3_transform, run_workflow
from .threshold import ThresholdConfig, ThresholdMethod

EXACT_WILCOXON_MAX_N = 10


class Family(str, Enum):
    GAUSSIAN_TTEST = "gaussian_ttest"
    EXPONENTIAL_WILCOXON = "exponential_wilcoxon"
    GPD_RECOVERY = "gpd_recovery"


@dataclass(frozen=True)
class ScenarioSpec:
    family: Family
    n: int
    d: float
    B: int
    reps: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.n < 2 or self.B < 1 or self.reps < 1:
            raise ConfigurationError("need n >= 2, B >= 1 and reps >= 1")
        if self.d < 0:
            raise ConfigurationError("effect size must be non-negative")


@dataclass(frozen=True)
class Replicate:
    rep: int
    t_obs: float
    perms: np.ndarray
    p_ref: float


def _label_subsets(rng: np.random.Generator, n_total: int, n1: int, B: int) -> np.ndarray:
    """B random size-``n1`` subsets of ``range(n_total)`` (rows of indices)."""
    idx = rng.permuted(np.tile(np.arange(n_total), (B, 1)), axis=1)
    return idx[:, :n1]


def pooled_t(x1: np.ndarray, x2: np.ndarray) -> float:
    """Equal-variance two-sample t statistic (mean of x2 minus mean of x1)."""
    n1, n2 = x1.size, x2.size
    sp2 = ((n1 - 1) * x1.var(ddof=1) + (n2 - 1) * x2.var(ddof=1)) / (n1 + n2 - 2)
    return float((x2.mean() - x1.mean()) / math.sqrt(sp2 * (1.0 / n1 + 1.0 / n2)))


def _perm_t(x: np.ndarray, groups1: np.ndarray) -> np.ndarray:
    """Pooled t for every relabelling, from group-1 sums and sums of squares."""
    N = x.size
    n1 = groups1.shape[1]
    n2 = N - n1
    tot, tot2 = x.sum(), (x * x).sum()
    s1 = x[groups1].sum(axis=1)
    q1 = (x[groups1] ** 2).sum(axis=1)
    s2, q2 = tot - s1, tot2 - q1
    ss = (q1 - s1 * s1 / n1) + (q2 - s2 * s2 / n2)
    sp2 = ss / (N - 2)
    return (s2 / n2 - s1 / n1) / np.sqrt(sp2 * (1.0 / n1 + 1.0 / n2))


def simulate_ttest_replicate(spec: ScenarioSpec, rep: int) -> Replicate:
    rng = make_rng(spec.seed, rep)
    x1 = rng.standard_normal(spec.n)
    x2 = rng.standard_normal(spec.n) + spec.d
    t = pooled_t(x1, x2)
    x = np.concatenate([x1, x2])
    # group 1 is the first n after relabelling
    perms = _perm_t(x, _label_subsets(rng, x.size, spec.n, spec.B))
    p_ref = float(2.0 * stats.t.sf(abs(t), 2 * spec.n - 2))
    return Replicate(rep, t, perms, p_ref)


def mann_whitney_u(x1: np.ndarray, x2: np.ndarray) -> float:
    """U statistic of the second sample (ties count one half)."""
    ranks = stats.rankdata(np.concatenate([x1, x2]))
    n2 = x2.size
    return float(ranks[x1.size:].sum() - n2 * (n2 + 1) / 2.0)


def wilcoxon_reference(x1: np.ndarray, x2: np.ndarray) -> float:
    """Two-sided rank-sum p-value: exact for tiny samples, else normal with continuity."""
    small = max(x1.size, x2.size) <= EXACT_WILCOXON_MAX_N
    method = "exact" if small else "asymptotic"
    return float(stats.mannwhitneyu(x2, x1, alternative="two-sided", method=method, use_continuity=True).pvalue)


def simulate_wilcoxon_replicate(spec: ScenarioSpec, rep: int) -> Replicate:
    rng = make_rng(spec.seed, rep)
    x1 = rng.exponential(1.0, spec.n)
    x2 = rng.exponential(1.0 + spec.d, spec.n)
    n1 = n2 = spec.n
    ranks = stats.rankdata(np.concatenate([x1, x2]))
    center = n1 * n2 / 2.0
    u_obs = ranks[n1:].sum() - n2 * (n2 + 1) / 2.0 - center
    # relabelled group 2 = complement of the group-1 subset
    g1 = _label_subsets(rng, n1 + n2, n1, spec.B)
    r1 = ranks[g1].sum(axis=1)
    perms = (ranks.sum() - r1) - n2 * (n2 + 1) / 2.0 - center
    return Replicate(rep, float(u_obs), perms, wilcoxon_reference(x1, x2))


def _simulate_one(spec: ScenarioSpec, rep: int) -> Replicate:
    if spec.family is Family.GAUSSIAN_TTEST:
        return simulate_ttest_replicate(spec, rep)
    if spec.family is Family.EXPONENTIAL_WILCOXON:
        return simulate_wilcoxon_replicate(spec, rep)
    raise ConfigurationError("gpd_recovery scenarios run through estimator_benchmark")


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def simulate_ttest_scenario(spec: ScenarioSpec, threads: int = 1) -> list[Replicate]:
    if spec.family is not Family.GAUSSIAN_TTEST:
        raise ConfigurationError("expected a gaussian_ttest scenario")
    return _map(lambda r: simulate_ttest_replicate(spec, r), range(spec.reps), threads)


def simulate_wilcoxon_scenario(spec: ScenarioSpec, threads: int = 1) -> list[Replicate]:
    if spec.family is not Family.EXPONENTIAL_WILCOXON:
        raise ConfigurationError("expected an exponential_wilcoxon scenario")
    return _map(lambda r: simulate_wilcoxon_replicate(spec, r), range(spec.reps), threads)


def simulate_scenario(spec: ScenarioSpec, threads: int = 1) -> list[Replicate]:
    return _map(lambda r: _simulate_one(spec, r), range(spec.reps), threads)


# --- comparators --------------------------------------------------------------

def comparator_configs(n_eff: int | None = None, seed: int = 0, threads: int | None = None,
                       n_boot: int = 999) -> dict[str, tuple[WorkflowConfig, bool]]:
    """Workflow settings of the compared methods, keyed by name.

    The boolean marks methods that cube the statistics first. Every method
    screens at empirical p < 0.1 and falls back to the empirical p-value.
    """
    gof = GofConfig(n_boot=n_boot)
    mle1d = EstimatorConfig(Method.MLE1D)
    classical_thr = ThresholdConfig(ThresholdMethod.FTR, k0_fraction=0.0, k0_floor=250)
    common = dict(alpha=0.05, p_thr=0.1, seed=seed, threads=threads, gof=gof)
    return {
        "permApprox": (WorkflowConfig(slls=SllsConfig(n_eff=n_eff), **common), False),
        "gpd_classical": (WorkflowConfig(estimator=mle1d, threshold=classical_thr, constrained=False,
                                         **common), False),
        "gpd_pow3": (WorkflowConfig(estimator=mle1d, threshold=classical_thr, constrained=False, **common), True),
        "gpd_obs": (WorkflowConfig(estimator=mle1d, threshold=ThresholdConfig(ThresholdMethod.FTR, k0_fraction=0.25,
                                                                           k0_floor=0),
                                   constrained=False, include_obs=True, **common), False),
        "gamma": (WorkflowConfig(model=TailModel.GAMMA, constrained=False, **common), False),
    }


ALL_METHODS = ("permApprox", "gpd_classical", "gpd_pow3", "gpd_obs", "gamma")


@dataclass(frozen=True)
class ComparatorRow:
    scenario: str
    rep: int
    method: str
    t_obs: float
    p_ref: float
    p_emp: float
    p_method: float
    source: str
    k: int | None
    xi_hat: float | None
    epsilon: float | None

    @property
    def ratio(self) -> float:
        return self.p_method / self.p_ref if self.p_ref > 0 else math.nan

    @property
    def is_zero(self) -> bool:
        return self.p_method == 0.0


def _run_method(cfg: WorkflowConfig, cube: bool, t_obs: np.ndarray, perms: np.ndarray) -> list[PValueRecord]:
    data = PermutationTestData(t_obs, perms, Tail.TWO_SIDED)
    if cube:
        data = pow3_transform(data)
    return run_workflow(data, cfg)


def run_comparators(spec: ScenarioSpec, replicates: Sequence[Replicate], methods: Iterable[str] = ALL_METHODS,
                    batch: bool = False, threads: int | None = None, n_boot: int = 999,
                    label: str | None = None) -> list[ComparatorRow]:
    """Apply the compared methods to simulated replicates.

    With ``batch=False`` every replicate is its own single-test analysis (the
    standardization cap then comes from the permutation quantile); with
    ``batch=True`` all replicates form one multiple-testing batch.
    """
    label = label or f"{spec.family.value}_n{spec.n}_d{spec.d:g}_B{spec.B}"
    configs = comparator_configs(spec.n, spec.seed, threads, n_boot)
    unknown = set(methods) - set(configs)
    if unknown:
        raise ConfigurationError(f"unknown comparator(s): {sorted(unknown)}")
    rows = []
    for name in methods:
        cfg, cube = configs[name]
        if batch:
            t_obs = np.array([r.t_obs for r in replicates])
            perms = np.column_stack([r.perms for r in replicates])
            recs = _run_method(cfg, cube, t_obs, perms)
        else:
            recs = [_run_method(replace(cfg, seed=_rep_seed(spec.seed, r.rep)), cube,
                                np.array([r.t_obs]), r.perms[:, None])[0] for r in replicates]
        for rep, rec in zip(replicates, recs):
            rows.append(ComparatorRow(label, rep.rep, name, rep.t_obs, rep.p_ref, rec.p_emp, rec.p_hybrid,
                                      rec.source.value, rec.k, rec.xi_hat, rec.epsilon))
    return rows


def _rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(rep),)).generate_state(1)[0])


@dataclass(frozen=True)
class MethodSummary:
    method: str
    median_ratio: float
    zeros: int
    n: int


def summarize(rows: Sequence[ComparatorRow]) -> dict[str, MethodSummary]:
    out = {}
    for name in dict.fromkeys(r.method for r in rows):
        sub = [r for r in rows if r.method == name]
        ratios = np.array([r.ratio for r in sub])
        ratios = ratios[np.isfinite(ratios)]
        out[name] = MethodSummary(name, float(np.median(ratios)) if ratios.size else math.nan,
                                  sum(r.is_zero for r in sub), len(sub))
    return out


COMPARATOR_HEADER = ("scenario", "rep", "method", "t_obs", "p_ref", "p_emp", "p_method", "ratio", "is_zero",
                     "source", "k", "xi_hat", "epsilon")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    return fmt_float(x)


def comparator_tsv(rows: Sequence[ComparatorRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(COMPARATOR_HEADER)
    for r in rows:
        w.writerow([r.scenario, r.rep, r.method, fmt(r.t_obs), fmt(r.p_ref), fmt(r.p_emp), fmt(r.p_method),
                    fmt(r.ratio), fmt(r.is_zero), r.source, fmt(r.k), fmt(r.xi_hat), fmt(r.epsilon)])
    return buf.getvalue()


# --- estimator benchmark --------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkCell:
    method: str
    xi0: float
    n: int
    rmse_xi: float
    rmse_sigma: float
    mean_abs_xi: float
    failures: int
    reps: int


def gpd_recovery_samples(xi0: float, n: int, reps: int, seed: int, sigma0: float = 1.0) -> np.ndarray:
    """``reps`` x ``n`` GPD draws; the stream depends on (seed, xi0, n) only."""
    key = int(round((xi0 + 10.0) * 1000))
    U = make_rng(seed, key, n).random((reps, n))
    return quantile(U, sigma0, xi0)


def estimator_benchmark(xi_grid: Sequence[float], n_grid: Sequence[int],
                        methods: Sequence[str] = ("MOM", "MLE1D", "MLE2D", "LME", "ZSE"),
                        reps: int = 500, seed: int = 0, sigma0: float = 1.0) -> list[BenchmarkCell]:
    """RMSE of the shape and scale estimates over a (xi0, n) grid.

    Samples are shared across methods within a cell; rows whose fit fails or
    returns non-finite values are counted as failures and excluded.
    """
    cells = []
    for xi0 in xi_grid:
        for n in n_grid:
            Y = gpd_recovery_samples(float(xi0), int(n), reps, seed, sigma0)
            Y = np.maximum(Y, np.finfo(float).tiny)
            for name in methods:
                cfg = EstimatorConfig(Method(name))
                try:
                    sig, xi = fit_gpd_batch(Y, cfg)
                except PermTailError:
                    sig, xi = _fit_rows(Y, cfg)
                ok = np.isfinite(sig) & np.isfinite(xi) & (sig > 0)
                e_xi, e_sig = xi[ok] - xi0, sig[ok] - sigma0
                cells.append(BenchmarkCell(name, float(xi0), int(n), float(np.sqrt(np.mean(e_xi ** 2))),
                                           float(np.sqrt(np.mean(e_sig ** 2))), float(np.mean(np.abs(e_xi))),
                                           int((~ok).sum()), reps))
    return cells


def _fit_rows(Y: np.ndarray, cfg: EstimatorConfig):
    sig = np.full(len(Y), np.nan)
    xi = np.full(len(Y), np.nan)
    for i, row in enumerate(Y):
        try:
            s, x = fit_gpd_batch(row[None, :], cfg)
            sig[i], xi[i] = s[0], x[0]
        except PermTailError:
            pass
    return sig, xi


BENCH_HEADER = ("method", "xi0", "n", "rmse_xi", "rmse_sigma", "mean_abs_xi", "failures", "reps")


def benchmark_tsv(cells: Sequence[BenchmarkCell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for c in cells:
        w.writerow([c.method, fmt(c.xi0), c.n, fmt(c.rmse_xi), fmt(c.rmse_sigma), fmt(c.mean_abs_xi),
                    c.failures, c.reps])
    return buf.getvalue()
