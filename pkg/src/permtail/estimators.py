"""GPD parameter estimation from threshold excesses.

Estimators work in the reparametrization ``theta = -xi/sigma`` used by the
profile likelihood: for fixed theta the shape is ``xi = -k(theta)`` with
``k(theta) = -mean(log(1 - theta*y))`` and the scale is ``k(theta)/theta``.
The support endpoint of such a fit is ``1/theta`` (theta > 0), so a support
constraint ``endpoint > bound`` is simply ``theta < 1/bound``.

The vectorized ``*_batch`` routines fit each row of a 2-D array independently;
the scalar :func:`fit_gpd` is a thin wrapper around them, so bootstrap refits
and the outer fit share one code path.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .errors import EstimationError, ParameterDomainError, UnsupportedCombinationError
from .gpd import GpdParams, gpd_loglik


class Method(str, Enum):
    MOM = "MOM"
    MLE2D = "MLE2D"
    MLE1D = "MLE1D"
    LME = "LME"
    ZSE = "ZSE"


DEFAULT_TOL = {
    Method.LME: 1e-7,
    Method.MLE1D: 1e-10,
    Method.MLE2D: 1e-10,
    Method.ZSE: None,
    Method.MOM: None,
}

MAX_ITER_1D = 200
MAX_EVAL_2D = 500
MIN_EXCESSES = 5
_HI_MARGIN = 1e-10  # theta_hi = (1 - margin) / endpoint
_SMALL_THETA = 1e-12  # |theta| * max(y) below this uses the exponential limit


@dataclass(frozen=True)
class FitConstraint:
    active: bool = False
    bound: float = math.inf

    def __post_init__(self):
        if self.active and not (math.isfinite(self.bound) and self.bound > 0):
            raise ParameterDomainError(f"constraint bound must be positive and finite, got {self.bound!r}")

    @classmethod
    def at(cls, bound: float) -> "FitConstraint":
        return cls(active=True, bound=float(bound))


NO_CONSTRAINT = FitConstraint()


@dataclass(frozen=True)
class EstimatorConfig:
    method: Method = Method.LME
    tol: float | None = None
    lme_r: float = -0.5

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.tol is not None and not self.tol > 0:
            raise ParameterDomainError("tolerance must be positive")
        if not (self.lme_r > -1 and self.lme_r != 0):
            raise ParameterDomainError("LME exponent must be > -1 and non-zero")

    @property
    def tolerance(self) -> float:
        if self.tol is not None:
            return self.tol
        return DEFAULT_TOL[self.method] or 0.0


# ---------------------------------------------------------------------------
# profile-likelihood building blocks (rows of Y are independent samples)


def _log1m(theta: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.log1p(-theta[..., None] * Y)


def _small(theta: np.ndarray, ymax: np.ndarray) -> np.ndarray:
    return np.abs(theta) * ymax < _SMALL_THETA


def _k_and_scale(theta: np.ndarray, Y: np.ndarray):
    """k(theta) and sigma(theta) for each row (theta shape == Y.shape[:-1])."""
    L = _log1m(theta, Y)
    khat = -L.mean(axis=-1)
    ymax = Y.max(axis=-1)
    small = _small(theta, ymax)
    safe = np.where(small, 1.0, theta)
    series = Y.mean(axis=-1) + 0.5 * theta * (Y * Y).mean(axis=-1)
    scale = np.where(small, series, khat / safe)
    return khat, scale


def _profile_ll(theta: np.ndarray, Y: np.ndarray) -> np.ndarray:
    n = Y.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        khat, scale = _k_and_scale(theta, Y)
        ll = n * (-np.log(scale) + khat - 1.0)
    return np.where(np.isfinite(ll), ll, -np.inf)


def profile_loglik_theta(theta: float, excesses) -> tuple[float, float, float]:
    """Profile log-likelihood at ``theta`` with the implied (xi, sigma).

    Returns:
        ``(loglik, xi_hat, sigma_hat)``; theta = 0 gives the exponential fit.
    """
    y = np.asarray(excesses, dtype=float)
    if y.size == 0 or np.any(y <= 0):
        raise ParameterDomainError("excesses must be positive and non-empty")
    if not theta < 1.0 / y.max():
        raise ParameterDomainError(f"theta must be below 1/max(excesses) = {1.0 / y.max()!r}")
    th = np.array([float(theta)])
    Y = y[None, :]
    khat, scale = _k_and_scale(th, Y)
    ll = _profile_ll(th, Y)
    return float(ll[0]), float(-khat[0]), float(scale[0])


def _bounds(Y: np.ndarray, bound: float | None):
    """Search interval for theta per row."""
    n = Y.shape[-1]
    ymax = Y[:, -1]
    q = Y[:, max(int(math.floor(n / 4 + 0.5)) - 1, 0)]
    lo = -20.0 / np.minimum(q, ymax)
    end = ymax if bound is None else np.maximum(ymax, bound)
    hi = (1.0 - _HI_MARGIN) / end
    return lo, hi


def _params_from_theta(theta: np.ndarray, Y: np.ndarray):
    khat, scale = _k_and_scale(theta, Y)
    return scale, -khat


# ---------------------------------------------------------------------------
# MOM


def _mom_batch(Y: np.ndarray):
    m = Y.mean(axis=1)
    v = Y.var(axis=1, ddof=1)
    ratio = m * m / v
    xi = 0.5 * (1.0 - ratio)
    sigma = 0.5 * m * (1.0 + ratio)
    return sigma, xi


# ---------------------------------------------------------------------------
# MLE1D: golden-section maximization of the profile likelihood

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _mle1d_batch(Y: np.ndarray, tol: float, bound: float | None = None):
    lo, hi = _bounds(Y, bound)
    f = lambda th: _profile_ll(th, Y)  # noqa: E731
    a, b = lo.copy(), hi.copy()
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    scale = 1.0 / Y[:, -1]
    for _ in range(MAX_ITER_1D):
        done = (b - a) <= tol * (np.abs(0.5 * (a + b)) + scale)
        if done.all():
            break
        left = fc >= fd
        a_n = np.where(left, a, c)
        b_n = np.where(left, d, b)
        x_new = np.where(left, b_n - _INVPHI * (b_n - a_n), a_n + _INVPHI * (b_n - a_n))
        f_new = f(x_new)
        c_n = np.where(left, x_new, d)
        fc_n = np.where(left, f_new, fd)
        d_n = np.where(left, c, x_new)
        fd_n = np.where(left, fc, f_new)
        a, b = np.where(done, a, a_n), np.where(done, b, b_n)
        c, fc = np.where(done, c, c_n), np.where(done, fc, fc_n)
        d, fd = np.where(done, d, d_n), np.where(done, fd, fd_n)
    else:
        raise EstimationError("golden-section search did not converge", "MLE1D",
                              {"iterations": MAX_ITER_1D, "width": float(np.max(b - a))})
    theta = np.where(fc >= fd, c, d)
    if not np.all(np.isfinite(np.maximum(fc, fd))):
        raise EstimationError("profile likelihood not finite at optimum", "MLE1D")
    return theta


# ---------------------------------------------------------------------------
# LME: root of a likelihood-moment estimating equation
#
# Under the GPD, U = (1 - theta*Y)^(1/k) is uniform, so
# E[(1 - theta*Y)^(r/k)] = 1/(1 + r). Replacing k by k(theta) gives an
# equation in theta alone whose root is the estimate.


def _lme_g(theta: np.ndarray, Y: np.ndarray, r: float) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        L = _log1m(theta, Y)
        khat = -L.mean(axis=-1)
        small = _small(theta, Y.max(axis=-1))
        ratio = np.where(small[..., None], -Y / Y.mean(axis=-1, keepdims=True),
                         L / np.where(small, 1.0, khat)[..., None])
        g = np.exp(r * ratio).mean(axis=-1) - 1.0 / (1.0 + r)
    return g


def lme_estimating_function(theta: float, excesses, r: float = -0.5) -> float:
    """Value of the LME estimating equation at ``theta`` (zero at the estimate)."""
    y = np.asarray(excesses, dtype=float)
    return float(_lme_g(np.array([float(theta)]), y[None, :], r)[0])


def _lme_g_and_slope(theta: np.ndarray, Y: np.ndarray, r: float):
    """Estimating function and its derivative in theta (rows not near theta = 0)."""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        D = 1.0 - theta[:, None] * Y
        L = np.log1p(-theta[:, None] * Y)
        khat = -L.mean(axis=1)
        E = np.exp(L * (r / khat)[:, None])
        g = E.mean(axis=1) - 1.0 / (1.0 + r)
        W = Y / D
        a = W.mean(axis=1)
        dratio = -W / khat[:, None] - L * (a / (khat * khat))[:, None]
        slope = r * (E * dratio).mean(axis=1)
    return g, slope


def _lme_batch(Y: np.ndarray, tol: float, r: float, bound: float | None = None):
    """Safeguarded Newton iteration inside a sign-change bracket."""
    lo, hi = _bounds(Y, bound)
    binding = np.zeros(len(Y), dtype=bool)
    if bound is not None:
        binding = ~(_lme_g(hi, Y, r) > 0)  # root at or beyond the constrained end
    g_lo = _lme_g(lo, Y, r)
    for _ in range(60):
        bad = ~(g_lo < 0) & ~binding
        if not bad.any():
            break
        lo = np.where(bad, 4.0 * lo, lo)
        g_lo = np.where(bad, _lme_g(lo, Y, r), g_lo)
    else:
        raise EstimationError("could not bracket the root from below", "LME")

    s_mom, x_mom = _mom_batch(Y)
    with np.errstate(invalid="ignore", divide="ignore"):
        x = -x_mom / s_mom
    width = hi - lo
    x = np.where(np.isfinite(x), np.clip(x, lo + 0.01 * width, hi - 0.01 * width), 0.5 * (lo + hi))
    scale = 1.0 / Y[:, -1]
    x = np.where(_small(x, Y[:, -1]), 1e-6 * scale, x)
    x = np.where(binding, hi, x)
    a, b = lo.copy(), hi.copy()
    done = binding.copy()
    resid = np.where(binding, 0.0, np.inf)
    for _ in range(MAX_ITER_1D):
        if done.all():
            break
        act = ~done
        g, slope = _lme_g_and_slope(x[act], Y[act], r)
        resid[act] = np.abs(g)
        xa, aa, ba = x[act], a[act], b[act]
        neg = g < 0
        aa = np.where(neg, xa, aa)
        ba = np.where(neg, ba, xa)
        with np.errstate(invalid="ignore", divide="ignore"):
            xn = xa - g / slope
        mid = 0.5 * (aa + ba)
        ok = np.isfinite(xn) & (xn > aa) & (xn < ba)
        xn = np.where(ok, xn, mid)
        conv = (np.abs(g) <= tol) | ((ba - aa) <= 1e-15 * (np.abs(xa) + scale[act]))
        a[act], b[act] = aa, ba
        x[act] = np.where(conv, xa, xn)
        done[act] = conv
    else:
        if not done.all():
            raise EstimationError("root finding did not converge", "LME",
                                  {"iterations": MAX_ITER_1D, "residual": float(np.max(resid))})
    return x


# ---------------------------------------------------------------------------
# ZSE: likelihood-weighted average over a fixed grid of theta candidates


def _zse_batch(Y: np.ndarray, bound: float | None = None, chunk: int = 64):
    R, n = Y.shape
    m = 20 + int(math.floor(math.sqrt(n)))
    ystar = Y[:, max(int(math.floor(n / 4 + 0.5)) - 1, 0)]
    j = np.arange(1, m + 1, dtype=float)
    grid = 1.0 / Y[:, -1:] + (1.0 - np.sqrt(m / (j - 0.5)))[None, :] / (3.0 * ystar[:, None])
    out = np.empty(R)
    for s in range(0, R, chunk):
        G = grid[s:s + chunk]
        Yc = Y[s:s + chunk][:, None, :]
        ll = _profile_ll(G, np.broadcast_to(Yc, G.shape + (n,)))
        if bound is not None:
            ll = np.where(G < 1.0 / bound, ll, -np.inf)
        top = ll.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(top)):
            raise EstimationError("no admissible grid candidate", "ZSE")
        w = np.exp(ll - top)
        w /= w.sum(axis=1, keepdims=True)
        out[s:s + chunk] = (w * G).sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# MLE2D: direct optimization of the two-parameter likelihood


def _nll(y, sigma, xi):
    try:
        return -gpd_loglik(y, GpdParams(sigma, xi))
    except ParameterDomainError:
        return math.inf


def _nelder_mead(f, p0, opts):
    # infeasible vertices give inf; the simplex spread check then sees inf - inf
    with np.errstate(invalid="ignore"):
        return minimize(f, p0, method="Nelder-Mead", options=opts)


def _mle2d_single(y: np.ndarray, tol: float, bound: float | None):
    opts = {"xatol": tol, "fatol": tol, "maxfev": MAX_EVAL_2D}
    Y = y[None, :]
    starts = []
    s_mom, x_mom = _mom_batch(Y)
    if np.isfinite(s_mom[0]) and s_mom[0] > 0:
        starts.append((float(s_mom[0]), float(x_mom[0])))
    s1, x1 = _params_from_theta(_mle1d_batch(Y, DEFAULT_TOL[Method.MLE1D]), Y)
    starts.append((float(s1[0]), float(x1[0])))

    best = None
    for s0, x0 in starts:
        res = _nelder_mead(lambda p: _nll(y, math.exp(p[0]), p[1]), [math.log(s0), x0], opts)
        if np.isfinite(res.fun) and (best is None or res.fun < best[0]):
            best = (res.fun, math.exp(res.x[0]), float(res.x[1]))
    if best is None:
        raise EstimationError("no start reached a finite likelihood", "MLE2D")
    if bound is None or best[2] >= 0 or -best[1] / best[2] > bound:
        return best[1], best[2]

    # constraint binds: search xi < 0 with endpoint in (bound, 64*bound] and xi >= 0
    log64 = math.log(64.0)
    sc, xc = _params_from_theta(_mle1d_batch(Y, DEFAULT_TOL[Method.MLE1D], bound), Y)
    sc, xc = float(sc[0]), float(xc[0])

    lo_end = bound / (1.0 - _HI_MARGIN)  # expit can underflow to 0; keep the endpoint strictly above

    def unpack_neg(p):
        end = lo_end * math.exp(log64 * expit(p[0]))
        xi = -math.exp(p[1])
        return -xi * end, xi

    candidates = []
    if xc < 0:
        frac = min(max(math.log(-sc / xc / bound) / log64, 1e-6), 1 - 1e-6)
        p0 = [float(logit(frac)), math.log(-xc)]
    else:
        p0 = [0.0, math.log(0.1)]
    res = _nelder_mead(lambda p: _nll(y, *unpack_neg(p)), p0, opts)
    if np.isfinite(res.fun):
        candidates.append((res.fun, *unpack_neg(res.x)))
    p0 = [math.log(sc), math.sqrt(max(xc, 0.0))]
    res = _nelder_mead(lambda p: _nll(y, math.exp(p[0]), p[1] ** 2), p0, opts)
    if np.isfinite(res.fun):
        candidates.append((res.fun, math.exp(res.x[0]), float(res.x[1] ** 2)))
    if not candidates:
        raise EstimationError("constrained search found no feasible point", "MLE2D", {"bound": bound})
    _, sigma, xi = min(candidates)
    return sigma, xi


# ---------------------------------------------------------------------------
# public entry points


def _check_sample(Y: np.ndarray):
    if Y.shape[-1] < MIN_EXCESSES:
        raise ParameterDomainError(f"need at least {MIN_EXCESSES} excesses, got {Y.shape[-1]}")
    if not np.all(Y > 0) or not np.all(np.isfinite(Y)):
        raise ParameterDomainError("excesses must be positive and finite")


def fit_gpd_batch(samples, config: EstimatorConfig = EstimatorConfig(), bound: float | None = None):
    """Fit every row of ``samples`` independently.

    Args:
        samples: array of shape (R, k) of positive excesses.
        config: estimator selection and tolerance.
        bound: optional support constraint shared by all rows.

    Returns:
        ``(sigma, xi)`` arrays of length R.
    """
    Y = np.sort(np.asarray(samples, dtype=float), axis=1)
    _check_sample(Y)
    method, tol = config.method, config.tolerance
    if bound is not None and method is Method.MOM:
        raise UnsupportedCombinationError("MOM has no optimization step and cannot enforce a support constraint")

    flat = Y[:, -1] - Y[:, 0] <= 1e-12 * Y[:, -1]
    if flat.any():
        warnings.warn("degenerate excesses (all equal); returning a point-mass-adjacent fit", RuntimeWarning,
                      stacklevel=2)
    sigma = np.empty(len(Y))
    xi = np.empty(len(Y))
    edge = Y[flat, -1] if bound is None else np.maximum(Y[flat, -1], bound / (1.0 - _HI_MARGIN))
    sigma[flat], xi[flat] = edge, -1.0
    live = ~flat
    if live.any():
        Z = Y[live]
        if method is Method.MOM:
            s, x = _mom_batch(Z)
        elif method is Method.MLE1D:
            s, x = _params_from_theta(_mle1d_batch(Z, tol, bound), Z)
        elif method is Method.LME:
            s, x = _params_from_theta(_lme_batch(Z, tol, config.lme_r, bound), Z)
        elif method is Method.ZSE:
            s, x = _params_from_theta(_zse_batch(Z, bound), Z)
        else:
            pairs = [_mle2d_single(row, tol, bound) for row in Z]
            s = np.array([p[0] for p in pairs])
            x = np.array([p[1] for p in pairs])
        sigma[live], xi[live] = s, x
    return sigma, xi


def fit_gpd(excesses, config: EstimatorConfig = EstimatorConfig(),
            constraint: FitConstraint = NO_CONSTRAINT) -> GpdParams:
    """Estimate (sigma, xi) from positive excesses.

    With an active constraint every optimizer-based method keeps the fitted
    endpoint strictly above ``constraint.bound``. The constraint is vacuous
    when the unconstrained estimate already satisfies it.
    """
    y = np.asarray(excesses, dtype=float).ravel()
    bound = constraint.bound if constraint.active else None
    sigma, xi = fit_gpd_batch(y[None, :], config, bound)
    params = GpdParams(float(sigma[0]), float(xi[0]))
    if bound is not None and params.xi < 0 and not params.boundary > bound:
        raise EstimationError("constrained fit violates the support bound", config.method.value,
                              {"bound": bound, "endpoint": params.boundary})
    return params
