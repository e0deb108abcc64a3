import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import EXP_NEG_700, LOGLIK_Y12_SIGMA2, gpd_survival_mp
from permtail import (GpdParams, ParameterDomainError, gpd_cdf, gpd_log_survival, gpd_loglik, gpd_quantile,
                      gpd_sample, gpd_survival)


class TestGpdParams:
    """Parameter validation and support boundary."""

    def test_boundary_negative_shape(self):
        """Finite endpoint -sigma/xi for xi < 0."""
        assert GpdParams(1.0, -0.5).boundary == 2.0

    @pytest.mark.parametrize("xi", [0.0, 0.3])
    def test_boundary_infinite(self, xi):
        """Unbounded support for xi >= 0."""
        assert GpdParams(1.0, xi).boundary == math.inf

    @pytest.mark.parametrize("sigma", [0.0, -1.0, math.nan, math.inf])
    def test_invalid_scale(self, sigma):
        """Non-positive or non-finite scale is a domain error."""
        with pytest.raises(ParameterDomainError):
            GpdParams(sigma, 0.1)

    def test_negative_argument(self):
        """CDF of a negative argument is a domain error."""
        with pytest.raises(ParameterDomainError):
            gpd_cdf(-1.0, GpdParams(1.0, 0.0))


class TestCdfAndSurvival:
    """Closed-form values of CDF and survival."""

    def test_cdf_exponential(self):
        """Exponential branch at xi = 0."""
        assert gpd_cdf(1.0, GpdParams(1.0, 0.0)) == pytest.approx(1 - math.exp(-1), abs=1e-15)

    def test_cdf_at_boundary(self):
        """CDF is one at the endpoint."""
        assert gpd_cdf(2.0, GpdParams(1.0, -0.5)) == 1.0

    def test_cdf_unit_shape(self):
        """xi = 1 closed form."""
        assert gpd_cdf(1.0, GpdParams(1.0, 1.0)) == pytest.approx(0.5, abs=1e-15)

    def test_survival_exponential(self):
        assert gpd_survival(1.0, GpdParams(1.0, 0.0)) == pytest.approx(math.exp(-1), rel=1e-15)

    def test_survival_near_boundary(self):
        """Survival stays positive a hair below the endpoint."""
        s = gpd_survival(1.999999, GpdParams(1.0, -0.5))
        assert s > 0
        assert s == pytest.approx((1 - 0.9999995) ** 2, rel=1e-6)

    def test_survival_deep_tail(self):
        """exp(-700) is representable through the log-space path."""
        s = gpd_survival(700.0, GpdParams(1.0, 0.0))
        assert s > 0
        assert s == pytest.approx(EXP_NEG_700, rel=1e-12)

    def test_survival_zero_beyond_boundary(self):
        """Exact zero only at or past a finite endpoint."""
        p = GpdParams(1.0, -0.5)
        assert gpd_survival(2.0, p) == 0.0
        assert gpd_survival(3.0, p) == 0.0

    @pytest.mark.parametrize("y,sigma,xi", [(3.0, 1.0, 0.4), (50.0, 2.0, -0.01), (0.1, 0.5, -0.9),
                                            (200.0, 1.0, 0.05), (1e3, 3.0, 1.0)])
    def test_survival_against_mpmath(self, y, sigma, xi):
        """Agreement with the arbitrary-precision survival oracle."""
        ref = float(gpd_survival_mp(y, sigma, xi))
        assert gpd_survival(y, GpdParams(sigma, xi)) == pytest.approx(ref, rel=1e-12)

    def test_log_survival_finite_for_underflow(self):
        """The log survival keeps information where the survival underflows."""
        ls = gpd_log_survival(1e4, GpdParams(1.0, 0.0))
        assert ls == pytest.approx(-1e4)

    def test_vectorized(self):
        y = np.array([0.0, 1.0, 2.0])
        out = gpd_survival(y, GpdParams(1.0, 0.0))
        np.testing.assert_allclose(out, np.exp(-y), rtol=1e-15)

    @given(st.floats(-1.0, 1.0), st.floats(0.1, 10.0), st.floats(0.0, 1.0))
    @settings(max_examples=300, deadline=None)
    def test_survival_plus_cdf(self, xi, sigma, frac):
        """Survival and CDF sum to one outside the underflow regime."""
        p = GpdParams(sigma, xi)
        y = frac * (p.boundary if xi < 0 else 20 * sigma)
        s = gpd_survival(y, p)
        if s > 1e-15:
            assert abs(s + gpd_cdf(y, p) - 1.0) < 1e-12

    @given(st.floats(-1.0, -1e-3), st.floats(0.1, 10.0), st.floats(0.0, 1.0, exclude_max=True))
    @settings(max_examples=300, deadline=None)
    def test_positive_below_boundary(self, xi, sigma, frac):
        """Finite log survival below the endpoint; positive wherever float64 can hold it."""
        p = GpdParams(sigma, xi)
        y = frac * p.boundary
        if y < p.boundary:
            ls = gpd_log_survival(y, p)
            assert np.isfinite(ls)
            if ls > math.log(np.finfo(float).smallest_subnormal) + 1:
                assert gpd_survival(y, p) > 0

    @pytest.mark.parametrize("xi", [-0.05, -0.2, -0.5, -0.9])
    def test_positive_within_1e6_sigma_of_boundary(self, xi):
        p = GpdParams(1.3, xi)
        y = p.boundary - 1e-6 * p.sigma
        assert gpd_survival(y, p) > 0

    def test_cdf_monotone(self):
        rng = np.random.default_rng(1)
        for xi in (-0.7, -0.1, 0.0, 0.2, 0.9):
            p = GpdParams(1.0, xi)
            top = p.boundary if xi < 0 else 50.0
            y = np.sort(rng.uniform(0, top, 500))
            assert np.all(np.diff(gpd_cdf(y, p)) >= 0)


class TestContinuityAtZeroShape:
    """Near-zero shapes agree with the exponential limit."""

    @pytest.mark.parametrize("xi", [1e-9, -1e-9, 1e-7, -1e-7])
    def test_cdf_continuity(self, xi):
        y = np.linspace(0.0, 20.0, 401)[1:]
        diff = np.abs(gpd_cdf(y, GpdParams(1.0, xi)) - gpd_cdf(y, GpdParams(1.0, 0.0)))
        assert diff.max() < 1e-6

    @pytest.mark.parametrize("xi", [0.99e-8, 1.01e-8, -0.99e-8, -1.01e-8])
    def test_switch_seam(self, xi):
        """Both sides of the branch switch match the high-precision survival."""
        for y in np.linspace(0.1, 30.0, 12):
            ref = float(gpd_survival_mp(y, 1.0, xi))
            assert gpd_survival(y, GpdParams(1.0, xi)) == pytest.approx(ref, rel=1e-12)


class TestQuantile:
    """Inverse CDF values and round trip."""

    def test_median_exponential(self):
        assert gpd_quantile(0.5, GpdParams(1.0, 0.0)) == pytest.approx(math.log(2), rel=1e-15)

    def test_zero(self):
        assert gpd_quantile(0.0, GpdParams(2.5, -0.3)) == 0.0

    def test_closed_form(self):
        assert gpd_quantile(0.75, GpdParams(1.0, -0.5)) == pytest.approx(1.0, rel=1e-15)

    @pytest.mark.parametrize("p", [-0.1, 1.0, math.nan])
    def test_out_of_range(self, p):
        with pytest.raises(ParameterDomainError):
            gpd_quantile(p, GpdParams(1.0, 0.0))

    def test_round_trip(self):
        """10^4 random (p, sigma, xi) with xi in [-1, 1]."""
        rng = np.random.default_rng(20240501)
        P = rng.uniform(0, 1, 10_000)
        S = rng.uniform(0.05, 20, 10_000)
        X = rng.uniform(-1, 1, 10_000)
        err = max(abs(gpd_cdf(gpd_quantile(p, GpdParams(s, x)), GpdParams(s, x)) - p) for p, s, x in zip(P, S, X))
        assert err < 1e-10


class TestSample:
    """Inverse-CDF sampling."""

    def test_mean_exponential(self):
        x = gpd_sample(100_000, GpdParams(1.0, 0.0), rng_seed=7)
        assert abs(x.mean() - 1.0) < 0.02

    def test_max_below_endpoint(self):
        x = gpd_sample(100_000, GpdParams(1.0, -0.2), rng_seed=7)
        assert x.max() < 5.0

    def test_reproducible(self):
        a = gpd_sample(1, GpdParams(1.0, 0.1), rng_seed=123)
        b = gpd_sample(1, GpdParams(1.0, 0.1), rng_seed=123)
        assert a.tobytes() == b.tobytes()

    def test_seed_changes_draws(self):
        a = gpd_sample(10, GpdParams(1.0, 0.1), rng_seed=1)
        b = gpd_sample(10, GpdParams(1.0, 0.1), rng_seed=2)
        assert not np.array_equal(a, b)

    def test_invalid_size(self):
        with pytest.raises(ParameterDomainError):
            gpd_sample(0, GpdParams(1.0, 0.0), rng_seed=0)


class TestLoglik:
    """Log-likelihood values and support sentinel."""

    def test_single_point(self):
        assert gpd_loglik([1.0], GpdParams(1.0, 0.0)) == pytest.approx(-1.0, abs=1e-15)

    def test_two_points(self):
        assert gpd_loglik([1.0, 2.0], GpdParams(2.0, 0.0)) == pytest.approx(LOGLIK_Y12_SIGMA2, rel=1e-14)

    def test_outside_support(self):
        assert gpd_loglik([3.0], GpdParams(1.0, -0.5)) == -math.inf

    def test_empty(self):
        with pytest.raises(ParameterDomainError):
            gpd_loglik([], GpdParams(1.0, 0.0))

    def test_general_shape(self):
        """Matches the defining sum for xi != 0."""
        y = np.array([0.5, 1.0, 4.0])
        sigma, xi = 1.5, 0.3
        ref = -3 * math.log(sigma) - (1 + 1 / xi) * sum(math.log1p(xi * v / sigma) for v in y)
        assert gpd_loglik(y, GpdParams(sigma, xi)) == pytest.approx(ref, rel=1e-14)
