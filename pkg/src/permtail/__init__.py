"""Support-constrained GPD tail approximation of permutation p-values."""
from __future__ import annotations

__version__ = "0.1.0"

from .epsilon import (RefineConfig, RefineResult, SllsConfig, StandardizedPosition, ZcapPolicy, compute_zcap,
                      refine_tau, slls_epsilon, wendland)
from .errors import (ConfigurationError, DegenerateDistributionError, EstimationError, InputFormatError,
                     ParameterDomainError, PermTailError, UnsupportedCombinationError)
from .estimators import EstimatorConfig, FitConstraint, Method, fit_gpd, fit_gpd_batch, profile_loglik_theta
from .gof import AdMode, AdResult, CriticalValueTable, GofConfig, ad_pvalue, ad_statistic, ad_test
from .gpd import (GpdParams, gpd_cdf, gpd_log_survival, gpd_loglik, gpd_logpdf, gpd_quantile, gpd_sample,
                  gpd_survival)
from .pipeline import (PermutationTestData, PValueRecord, Source, Tail, TailFit, WorkflowConfig, bh_adjust,
                       empirical_pvalues, gamma_approx, pow3_transform, run_workflow, run_workflow_detailed,
                       transform_tail)
from .threshold import (CandidateScan, ThresholdConfig, ThresholdMethod, candidate_grid, forward_stop_index,
                        pelt_mean_changepoints, select_threshold)

__all__ = [
    "__version__",
    "RefineConfig",
    "RefineResult",
    "SllsConfig",
    "StandardizedPosition",
    "ZcapPolicy",
    "compute_zcap",
    "refine_tau",
    "slls_epsilon",
    "wendland",
    "ConfigurationError",
    "DegenerateDistributionError",
    "EstimationError",
    "InputFormatError",
    "ParameterDomainError",
    "PermTailError",
    "UnsupportedCombinationError",
    "EstimatorConfig",
    "FitConstraint",
    "Method",
    "fit_gpd",
    "fit_gpd_batch",
    "profile_loglik_theta",
    "AdMode",
    "AdResult",
    "CriticalValueTable",
    "GofConfig",
    "ad_pvalue",
    "ad_statistic",
    "ad_test",
    "GpdParams",
    "gpd_cdf",
    "gpd_log_survival",
    "gpd_loglik",
    "gpd_logpdf",
    "gpd_quantile",
    "gpd_sample",
    "gpd_survival",
    "PermutationTestData",
    "PValueRecord",
    "Source",
    "Tail",
    "TailFit",
    "WorkflowConfig",
    "bh_adjust",
    "empirical_pvalues",
    "gamma_approx",
    "pow3_transform",
    "run_workflow",
    "run_workflow_detailed",
    "transform_tail",
    "CandidateScan",
    "ThresholdConfig",
    "ThresholdMethod",
    "candidate_grid",
    "forward_stop_index",
    "pelt_mean_changepoints",
    "select_threshold",
]
