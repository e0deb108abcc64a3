"""Command-line front end.

Subcommands:

* ``approx``: hybrid p-values for a table of observed and permuted statistics.
* ``simulate``: run a simulation scenario through the comparator methods.
* ``bench-estimators``: RMSE benchmark of the GPD estimators.

Exit status is 0 on success, 2 for invalid arguments or input files and 1 for
any other failure.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .epsilon import SllsConfig, ZcapPolicy
from .errors import ConfigurationError
from .estimators import EstimatorConfig, Method
from .gof import AdMode, CriticalValueTable, GofConfig
from .io import format_records, read_two_file, read_wide
from .pipeline import (PermutationTestData, PValueRecord, Source, Tail, WorkflowConfig, bh_adjust,
                       run_workflow)
from .simharness import (ALL_METHODS, Family, ScenarioSpec, benchmark_tsv, comparator_tsv, estimator_benchmark,
                         run_comparators, simulate_scenario)
from .threshold import ThresholdConfig, ThresholdMethod

MIN_ROWS_WITH_NA = 50


class UsageError(ConfigurationError):
    """Inconsistent command-line arguments."""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _ArgumentParser(prog="permtail", description="GPD tail approximation of permutation p-values")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    a = sub.add_parser("approx", help="hybrid p-values for observed and permuted statistics")
    src = a.add_argument_group("input")
    src.add_argument("--input", help="wide table: first row observed, then one row per permutation")
    src.add_argument("--observed", help="observed statistics (two-file mode)")
    src.add_argument("--perms", help="permutation matrix (two-file mode)")
    src.add_argument("--header", action="store_true", help="first line holds test names")
    src.add_argument("--delimiter", choices=("auto", "tab", "comma"), default="auto")
    a.add_argument("--output", "-o", help="output TSV (default: stdout)")
    a.add_argument("--tail", choices=[t.value for t in Tail], default="right")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--p-thr", type=float, default=None, help="screening threshold (default 2*alpha)")
    a.add_argument("--estimator", choices=[m.value for m in Method], default="LME")
    a.add_argument("--tol", type=float, default=None)
    a.add_argument("--lme-r", type=float, default=-0.5)
    a.add_argument("--threshold-method", choices=[t.value for t in ThresholdMethod], default="robFTR")
    a.add_argument("--k0-fraction", type=float, default=0.25)
    a.add_argument("--k0-floor", type=int, default=250)
    a.add_argument("--step", type=int, default=None)
    a.add_argument("--min-exceedances", type=int, default=30)
    a.add_argument("--gof-alpha", type=float, default=0.05)
    a.add_argument("--n-boot", type=int, default=999)
    a.add_argument("--ad-table", help="critical-value table; switches AD p-values to table mode")
    a.add_argument("--unconstrained", action="store_true", help="fit without the support constraint")
    a.add_argument("--kappa-factor", type=float, default=1000.0)
    a.add_argument("--tau", type=float, default=0.25)
    a.add_argument("--rho-lift", type=float, default=0.025)
    a.add_argument("--eps-min", type=float, default=1e-6)
    a.add_argument("--n-ref", type=int, default=500)
    a.add_argument("--n-eff", type=int, default=None, help="per-group sample size min(n1, n2)")
    a.add_argument("--zcap-policy", choices=[z.value for z in ZcapPolicy], default="auto")
    a.add_argument("--no-refine", action="store_true", help="skip the tau refinement for underflowing tests")
    a.add_argument("--include-obs", action="store_true", help="add the observed value to the tail sample")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--threads", type=int, default=None, help="worker threads (default: $PERMTAIL_THREADS or 1)")

    s = sub.add_parser("simulate", help="simulation scenario through the comparator methods")
    s.add_argument("--family", choices=[Family.GAUSSIAN_TTEST.value, Family.EXPONENTIAL_WILCOXON.value],
                   required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--d", type=float, required=True)
    s.add_argument("--B", type=int, default=1000)
    s.add_argument("--reps", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--methods", default=",".join(ALL_METHODS))
    s.add_argument("--batch", action="store_true", help="treat all replicates as one multiple-testing batch")
    s.add_argument("--n-boot", type=int, default=999)
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--output", "-o")

    b = sub.add_parser("bench-estimators", help="RMSE of the GPD estimators on simulated samples")
    b.add_argument("--xi", type=_floats, default=[-0.4, 0.0, 0.4])
    b.add_argument("--n", type=_ints, default=[100, 250, 1000])
    b.add_argument("--methods", default="MOM,MLE1D,MLE2D,LME,ZSE")
    b.add_argument("--reps", type=int, default=500)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--output", "-o")
    return p


def _workflow_config(args) -> WorkflowConfig:
    if args.ad_table:
        gof = GofConfig(AdMode.TABLE, args.n_boot, CriticalValueTable.load(args.ad_table))
    else:
        gof = GofConfig(AdMode.BOOTSTRAP, args.n_boot)
    return WorkflowConfig(
        alpha=args.alpha,
        p_thr=args.p_thr,
        estimator=EstimatorConfig(args.estimator, args.tol, args.lme_r),
        threshold=ThresholdConfig(args.threshold_method, args.k0_fraction, args.k0_floor, args.step,
                                  args.min_exceedances, args.gof_alpha),
        gof=gof,
        slls=SllsConfig(args.kappa_factor, args.tau, args.rho_lift, args.eps_min, args.n_ref, args.n_eff,
                        args.zcap_policy),
        constrained=not args.unconstrained,
        include_obs=args.include_obs,
        refine=not args.no_refine,
        seed=args.seed,
        threads=args.threads,
    )


def _load(args):
    if args.input and (args.observed or args.perms):
        raise UsageError("use either --input or --observed/--perms, not both")
    delim = None if args.delimiter == "auto" else args.delimiter
    if args.input:
        return read_wide(args.input, args.header, delim)
    if args.observed and args.perms:
        return read_two_file(args.observed, args.perms, args.header, delim)
    raise UsageError("an input is required: --input FILE or --observed FILE --perms FILE")


def run_approx(args) -> str:
    config = _workflow_config(args)
    table = _load(args)
    t_obs, P, ids = table.t_obs, table.perms, table.test_ids
    m = t_obs.size
    tail = Tail(args.tail)
    complete = np.isfinite(t_obs) & np.all(np.isfinite(P), axis=0)
    records: list[PValueRecord | None] = [None] * m
    full = np.flatnonzero(complete)
    if full.size:
        data = PermutationTestData(t_obs[full], P[:, full], tail)
        for j, rec in zip(full, run_workflow(data, config, [ids[j] for j in full])):
            records[j] = rec
    for j in np.flatnonzero(~complete):
        col = P[:, j]
        col = col[np.isfinite(col)]
        if np.isfinite(t_obs[j]) and col.size >= MIN_ROWS_WITH_NA:
            t = {Tail.LEFT: -t_obs[j], Tail.TWO_SIDED: abs(t_obs[j])}.get(tail, t_obs[j])
            c = {Tail.LEFT: -col, Tail.TWO_SIDED: np.abs(col)}.get(tail, col)
            p = (1.0 + np.count_nonzero(c >= t)) / (1.0 + c.size)
            records[j] = PValueRecord(ids[j], float(t_obs[j]), float(p), None, float(p), Source.FALLBACK_EMPIRICAL)
        else:
            records[j] = PValueRecord(ids[j], float(t_obs[j]), float("nan"), None, float("nan"), Source.INVALID)
    valid = [j for j in range(m) if records[j].source is not Source.INVALID]
    adj = bh_adjust([records[j].p_hybrid for j in valid])
    for j, q in zip(valid, adj):
        records[j] = replace(records[j], p_bh=float(q))
    return format_records(records)


def run_simulate(args) -> str:
    spec = ScenarioSpec(args.family, args.n, args.d, args.B, args.reps, args.seed)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    reps = simulate_scenario(spec)
    rows = run_comparators(spec, reps, methods, batch=args.batch, threads=args.threads, n_boot=args.n_boot)
    return comparator_tsv(rows)


def run_bench(args) -> str:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    cells = estimator_benchmark(args.xi, args.n, methods, args.reps, args.seed)
    return benchmark_tsv(cells)


def _write(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {"approx": run_approx, "simulate": run_simulate, "bench-estimators": run_bench}
    try:
        out = handlers[args.command](args)
        _write(out, getattr(args, "output", None))
    except ValueError as exc:  # configuration, domain and input-format errors
        print(f"permtail: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"permtail: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def run_cli(argv=None) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
