import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import best_segmentation, forward_stop_loop, segmentation_cost
from permtail import (ConfigurationError, EstimatorConfig, GofConfig, GpdParams, ThresholdConfig, ThresholdMethod,
                      candidate_grid, forward_stop_index, pelt_mean_changepoints, select_threshold)
from permtail.threshold import CandidateFit, ThresholdScan, evaluate_candidate


def synthetic_scan(pvals, xis=None, k0=250, step=10):
    """Scan whose candidate fits carry the given AD p-values (NaN marks a failed fit)."""
    ks = [k0 - step * i for i in range(len(pvals))]
    xis = xis if xis is not None else [-0.1] * len(pvals)
    fits = {}
    for k, p, x in zip(ks, pvals, xis):
        params = None if math.isnan(p) else GpdParams(1.0, x)
        fits[k] = CandidateFit(k, float(-k), k, params, 0.0, p)
    return ThresholdScan(ks, fits.__getitem__)


class TestThresholdConfig:
    """Defaults and k0 rule."""

    def test_defaults(self):
        c = ThresholdConfig()
        assert c.method is ThresholdMethod.ROBFTR
        assert (c.min_exceedances, c.gof_alpha, c.step_size) == (30, 0.05, 10)

    @pytest.mark.parametrize("method,step", [("FTR", 10), ("robFTR", 10), ("ForwardStop", 1),
                                             ("GofChangepoint", 1), ("ShapeVariation", 1)])
    def test_default_steps(self, method, step):
        assert ThresholdConfig(method).step_size == step

    @pytest.mark.parametrize("B,k0", [(1000, 250), (5000, 1250), (10000, 2500), (500, 250), (200, 199)])
    def test_k0(self, B, k0):
        assert ThresholdConfig().k0(B) == k0

    @pytest.mark.parametrize("kwargs", [{"step": 0}, {"min_exceedances": 2}, {"gof_alpha": 1.0},
                                        {"k0_fraction": 1.5}, {"method": "nope"}])
    def test_invalid(self, kwargs):
        with pytest.raises((ConfigurationError, ValueError)):
            ThresholdConfig(**kwargs)


class TestCandidateGrid:
    """Admissible exceedance counts."""

    def test_default_grid(self):
        perms = np.random.default_rng(0).normal(size=1000)
        assert candidate_grid(perms, 100.0) == list(range(250, 29, -10))

    def test_large_B(self):
        perms = np.random.default_rng(0).normal(size=5000)
        assert candidate_grid(perms, 100.0)[0] == 1250

    def test_restriction_binds(self):
        """Every threshold lies at or above t_obs, so nothing is admissible."""
        perms = np.arange(1000, dtype=float)
        t_obs = np.sort(perms)[1000 - 250 - 1] - 0.5
        assert candidate_grid(perms, t_obs) == []

    def test_restriction_trims_small_counts(self):
        """Thresholds rise as k falls; counts whose threshold reaches t_obs drop out."""
        perms = np.arange(1000, dtype=float)
        t_obs = 1000 - 100 - 1 + 0.5  # between the thresholds of k = 100 and k = 99
        assert candidate_grid(perms, t_obs, ThresholdConfig(step=1)) == list(range(250, 99, -1))

    def test_thresholds_below_t_obs(self):
        perms = np.random.default_rng(1).normal(size=1000)
        S = np.sort(perms)
        t_obs = S[900]
        ks = candidate_grid(perms, t_obs, ThresholdConfig(step=1))
        assert ks and all(S[1000 - k - 1] < t_obs for k in ks)
        assert min(ks) == 100 and max(ks) == 250

    def test_ties_counted_strictly(self):
        """A tied block at the threshold is excluded from the exceedances."""
        perms = np.concatenate([np.zeros(960), np.arange(1, 41, dtype=float)])
        cfg = ThresholdConfig(k0_floor=0, k0_fraction=0.05, step=1)
        assert candidate_grid(perms, 100.0, cfg) == list(range(50, 29, -1))
        fit = evaluate_candidate(np.sort(perms), 50, EstimatorConfig(), GofConfig(n_boot=100), 0)
        assert fit.u == 0.0 and fit.n_exceed == 40
        cfg = ThresholdConfig(k0_floor=0, k0_fraction=0.05, step=1, min_exceedances=41)
        assert candidate_grid(perms, 100.0, cfg) == []

    def test_too_small_B(self):
        assert candidate_grid(np.arange(20.0), 100.0) == []

    @given(st.integers(0, 2**32 - 1), st.floats(-3, 3))
    @settings(max_examples=50, deadline=None)
    def test_invariants(self, seed, t_obs):
        perms = np.random.default_rng(seed).normal(size=600)
        S = np.sort(perms)
        cfg = ThresholdConfig(step=7)
        ks = candidate_grid(perms, t_obs, cfg)
        assert all(a > b for a, b in zip(ks, ks[1:]))
        assert all(k >= 30 for k in ks)
        assert all(S[600 - k - 1] < t_obs for k in ks)
        assert all((cfg.k0(600) - k) % 7 == 0 for k in ks)


class TestForwardStop:
    """ForwardStop stopping index."""

    def test_all_zero(self):
        assert forward_stop_index([0.0] * 10, 0.05) is None

    def test_single(self):
        assert forward_stop_index([0.9], 0.05) == 1

    def test_third(self):
        assert forward_stop_index([0.01, 0.01, 0.2], 0.05) == 3

    def test_clamp_one(self):
        assert forward_stop_index([1.0], 0.05) == 1

    def test_empty(self):
        assert forward_stop_index([], 0.05) is None

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.001, 0.5))
    @settings(max_examples=300, deadline=None)
    def test_matches_loop(self, p, alpha):
        assert forward_stop_index(p, alpha) == forward_stop_loop(p, alpha)

    @given(st.lists(st.floats(0, 0.99), min_size=1, max_size=40), st.floats(0, 1), st.floats(0.001, 0.5))
    @settings(max_examples=300, deadline=None)
    def test_monotone_under_increase(self, p, bump, alpha):
        """Raising p-values never moves the stopping index later."""
        q = [min(v + bump * (1 - v), 1.0) for v in p]
        a, b = forward_stop_index(p, alpha), forward_stop_index(q, alpha)
        if a is not None:
            assert b is not None and b <= a


class TestPelt:
    """Mean-shift changepoints."""

    def test_constant(self):
        assert pelt_mean_changepoints([3.0] * 12, 0.5) == []

    def test_step(self):
        assert pelt_mean_changepoints([0, 0, 0, 0, 1, 1, 1, 1], 0.5) == [4]

    def test_step_matches_exhaustive(self):
        cps, _ = best_segmentation([0, 0, 0, 0, 1, 1, 1, 1], 0.5)
        assert cps == [4]

    def test_min_segment(self):
        """A single outlier cannot form its own segment."""
        cps = pelt_mean_changepoints([0, 0, 0, 10, 0, 0, 0], 0.1)
        starts = [0, *cps, 7]
        assert all(b - a >= 2 for a, b in zip(starts[:-1], starts[1:]))

    def test_too_short(self):
        with pytest.raises(ConfigurationError):
            pelt_mean_changepoints([1.0], 1.0)

    def test_random_against_exhaustive(self):
        """Optimal cost equals the exhaustive search on 300 short sequences."""
        rng = np.random.default_rng(2024)
        for _ in range(300):
            n = int(rng.integers(2, 12))
            seq = list(np.round(rng.normal(size=n) + rng.integers(0, 3, size=n), 2))
            pen = float(rng.uniform(0.05, 3))
            min_seg = int(rng.integers(1, 4))
            cps = pelt_mean_changepoints(seq, pen, min_seg)
            _, best = best_segmentation(seq, pen, min_seg)
            assert segmentation_cost(seq, [0, *cps]) + pen * len(cps) == pytest.approx(best, abs=1e-9)

    def test_deterministic(self):
        seq = np.random.default_rng(5).normal(size=60)
        assert pelt_mean_changepoints(seq, 1.0) == pelt_mean_changepoints(seq, 1.0)


class TestSelection:
    """Selection rules on synthetic AD p-value sequences."""

    def test_ftr_all_accepted(self):
        sel = select_threshold(synthetic_scan([0.5] * 10), ThresholdConfig("FTR"))
        assert sel.index == 0 and sel.k == 250

    def test_ftr_vs_robftr(self):
        p = [0.2, 0.01, 0.2, 0.2, 0.2, 0.2]
        assert select_threshold(synthetic_scan(p), ThresholdConfig("FTR")).index == 0
        assert select_threshold(synthetic_scan(p), ThresholdConfig("robFTR")).index == 2

    def test_robftr_none(self):
        assert select_threshold(synthetic_scan([0.2, 0.2, 0.01] * 4), ThresholdConfig("robFTR")) is None

    def test_ftr_none(self):
        assert select_threshold(synthetic_scan([0.01] * 8), ThresholdConfig("FTR")) is None

    def test_failed_fit_rejected(self):
        sel = select_threshold(synthetic_scan([math.nan, 0.5, 0.5, 0.5]), ThresholdConfig("robFTR"))
        assert sel.index == 1

    def test_empty_scan(self):
        assert select_threshold(ThresholdScan([], lambda k: None)) is None

    def test_lazy_evaluation(self):
        """robFTR stops fitting once three accepted candidates are found."""
        scan = synthetic_scan([0.5] * 20)
        select_threshold(scan, ThresholdConfig("robFTR"))
        assert scan.n_evaluated == 3

    @given(st.lists(st.sampled_from([0.01, 0.03, 0.2, 0.6]), min_size=1, max_size=25))
    @settings(max_examples=200, deadline=None)
    def test_robftr_within_ftr(self, p):
        rob = select_threshold(synthetic_scan(p), ThresholdConfig("robFTR"))
        ftr = select_threshold(synthetic_scan(p), ThresholdConfig("FTR"))
        if rob is not None:
            assert ftr is not None and ftr.index <= rob.index

    def test_forward_stop(self):
        sel = select_threshold(synthetic_scan([0.01, 0.01, 0.2, 0.5]), ThresholdConfig("ForwardStop"))
        assert sel.index == 2

    def test_forward_stop_failed_fit(self):
        assert select_threshold(synthetic_scan([0.01, math.nan]), ThresholdConfig("ForwardStop")) is None

    def test_changepoint_prepended(self):
        """With steady accepted p-values, the change is found at or before the first candidate."""
        for seed in range(100):
            p = np.random.default_rng(seed).uniform(0.3, 0.7, 30)
            seq = np.concatenate([np.full(5, 1e-6), p])
            cps = pelt_mean_changepoints(seq, 2 * math.log(seq.size) * np.var(seq, ddof=1))
            assert cps and cps[0] <= 5
            sel = select_threshold(synthetic_scan(list(p), step=1), ThresholdConfig("GofChangepoint"))
            assert sel.index == 0

    def test_changepoint_after_poor_fits(self):
        p = [0.001] * 8 + [0.6, 0.5, 0.7, 0.55, 0.65, 0.6, 0.7, 0.5, 0.6, 0.55]
        sel = select_threshold(synthetic_scan(p, step=1), ThresholdConfig("GofChangepoint"))
        assert sel.index == 8

    def test_shape_variation_window(self):
        xis = [0.3, -0.5, 0.2, -0.1, -0.1, -0.1, -0.1, -0.1, 0.4, -0.6]
        sel = select_threshold(synthetic_scan([0.5] * 10, xis, step=1), ThresholdConfig("ShapeVariation"))
        assert sel.index == 5  # centre of the flat window 3..7

    def test_shape_variation_too_few(self):
        assert select_threshold(synthetic_scan([0.5] * 4, step=1), ThresholdConfig("ShapeVariation")) is None

    def test_full_scan(self):
        scan = synthetic_scan([0.1, math.nan, 0.3])
        full = scan.full()
        assert full.ks == [250, 240, 230]
        assert full.ad_pvalues[0] == 0.1 and math.isnan(full.xi_hats[1])


class TestEvaluateCandidate:
    """Real fits at a candidate count."""

    def test_fit_and_threshold(self):
        S = np.sort(np.random.default_rng(0).exponential(size=1000))
        fit = evaluate_candidate(S, 100, EstimatorConfig(), GofConfig(n_boot=199), rng_seed=1)
        assert fit.u == S[1000 - 100 - 1]
        assert fit.n_exceed == 100
        assert fit.params is not None and abs(fit.params.xi) < 0.3
        assert 0 < fit.ad_pvalue <= 1

    def test_selected_u_below_t_obs(self):
        rng = np.random.default_rng(4)
        perms = rng.normal(size=1000)
        t_obs = float(np.sort(perms)[-40])
        cfg = ThresholdConfig()
        S = np.sort(perms)
        ks = candidate_grid(perms, t_obs, cfg)
        scan = ThresholdScan(ks, lambda k: evaluate_candidate(S, k, EstimatorConfig(), GofConfig(n_boot=199), 0))
        sel = select_threshold(scan, cfg)
        assert sel is not None and sel.k in ks and sel.u < t_obs
