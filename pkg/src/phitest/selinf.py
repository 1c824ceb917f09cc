"""Inference for selected surrogate coefficients.

Three modes share one summary type:

* ``truncated_normal``: the contrast ``T = v'y`` conditioned on a polyhedral
  selection event follows a Gaussian truncated to ``[lower, upper]``; p-values
  are its tail probabilities and intervals come from inverting them.
* ``split_t``: classical OLS t-inference on rows not used for selection.
* ``naive``: the same t mechanics on the selection rows (ignores selection).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.special import erf, log_ndtr

from .selection import SelectionOutcome, refit_ols

MODES = ("truncated_normal", "split_t", "naive")
_SQRT2 = math.sqrt(2.0)


class InferenceError(ValueError):
    pass


@dataclass(frozen=True)
class TruncationInterval:
    lower: float
    upper: float
    feasible: bool = True


@dataclass(frozen=True)
class SelectiveSummary:
    T: float
    theta_hat: float
    tau: float
    p_value: float
    ci_low: float
    ci_high: float
    alpha: float
    mode: str
    df: int | None = None
    lower: float = -math.inf
    upper: float = math.inf

    @property
    def stat(self) -> float:
        return self.theta_hat / self.tau

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# truncation interval


def truncation_bounds(A, b, v, y, tol: float = 1e-9) -> TruncationInterval:
    """Interval for ``T = v'y`` along the line ``W + c t`` inside ``{A y <= b}``.

    ``c = v / ||v||^2`` and ``W = y - c T``.  Rows with ``a'c = 0`` bound
    ``W`` only; if one of them is violated the result is flagged infeasible.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    v = np.asarray(v, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.shape[0] == 0:
        return TruncationInterval(-math.inf, math.inf, True)
    slack = b - A @ y
    scale = max(1.0, float(np.max(np.abs(b))), float(np.max(np.abs(A @ y))))
    if np.min(slack) < -tol * scale:
        raise InferenceError("y outside selection polyhedron")
    vv = float(v @ v)
    if vv <= 0:
        raise InferenceError("contrast vector is zero")
    c = v / vv
    T = float(v @ y)
    W = y - c * T
    ac = A @ c
    rest = b - A @ W
    flat = np.abs(ac) < 1e-12 * np.linalg.norm(A, axis=1) * np.linalg.norm(c)
    feasible = bool(np.all(rest[flat] >= -tol * scale))
    up = ac > 0
    lo = ac < 0
    up &= ~flat
    lo &= ~flat
    upper = float(np.min(rest[up] / ac[up])) if up.any() else math.inf
    lower = float(np.max(rest[lo] / ac[lo])) if lo.any() else -math.inf
    if lower > upper:
        feasible = False
    return TruncationInterval(lower, upper, feasible)


# ---------------------------------------------------------------------------
# truncated-normal CDF


def _log_mass(lo: float, hi: float) -> float:
    """``log(Phi(hi) - Phi(lo))`` for standardized ``lo <= hi``, tail-safe."""
    if hi <= lo:
        return -math.inf
    if lo >= 0.0:
        lq_lo = float(log_ndtr(-lo))
        lq_hi = float(log_ndtr(-hi))
        gap = lq_hi - lq_lo
        if not (math.isfinite(lq_lo) and gap < 0.0):
            return -math.inf
        return lq_lo + math.log(-math.expm1(gap))
    if hi <= 0.0:
        return _log_mass(-hi, -lo)
    mass = 0.5 * (float(erf(hi / _SQRT2)) - float(erf(lo / _SQRT2)))
    return math.log(mass) if mass > 0.0 else -math.inf


def _tails(t, mu, tau, a, b):
    """(P(X <= t), P(X >= t)) for X ~ N(mu, tau^2) truncated to [a, b]."""
    if not tau > 0:
        raise InferenceError("tau must be positive")
    if not a < b:
        raise InferenceError(f"truncation interval [{a}, {b}] is empty")
    t = min(max(t, a), b)
    za, zb, zt = (a - mu) / tau, (b - mu) / tau, (t - mu) / tau
    log_total = _log_mass(za, zb)
    if not math.isfinite(log_total):
        raise InferenceError("interval numerically empty")
    lower = math.exp(min(0.0, _log_mass(za, zt) - log_total))
    upper = math.exp(min(0.0, _log_mass(zt, zb) - log_total))
    return lower, upper


def tn_cdf(t: float, mu: float, tau: float, a: float = -math.inf, b: float = math.inf) -> float:
    """CDF at ``t`` of ``N(mu, tau^2)`` truncated to ``[a, b]``.

    Tail masses are handled in log space, so intervals many standard
    deviations from ``mu`` keep full relative precision.
    """
    return _tails(float(t), float(mu), float(tau), float(a), float(b))[0]


def tn_sf(t: float, mu: float, tau: float, a: float = -math.inf, b: float = math.inf) -> float:
    """Upper tail ``P(X >= t)``; computed directly, not as ``1 - tn_cdf``."""
    return _tails(float(t), float(mu), float(tau), float(a), float(b))[1]


def selective_p(T: float, tau: float, interval: TruncationInterval, theta0: float = 0.0, sided: str = "two") -> float:
    if not interval.feasible:
        raise InferenceError("truncation interval is infeasible")
    lower, upper = _tails(T, theta0, tau, interval.lower, interval.upper)
    if sided == "greater":
        p = upper
    elif sided == "less":
        p = lower
    elif sided == "two":
        p = 2.0 * min(lower, upper)
    else:
        raise ValueError(f"unknown alternative {sided!r}")
    return float(min(1.0, max(0.0, p)))


def _bisect(fn, lo, hi, tol, max_iter=200):
    """Root of a function increasing on ``[lo, hi]`` with ``fn(lo) <= 0 <= fn(hi)``."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol:
            return mid
        if fn(mid) < 0:
            lo = mid
        else:
            hi = mid
    raise InferenceError("confidence bound bisection did not converge")


def selective_ci(T: float, tau: float, interval: TruncationInterval, alpha: float = 0.05,
                 reach: float = 50.0) -> tuple[float, float]:
    """Equal-tailed interval from inverting the truncated-normal tail tests.

    The lower bound solves ``P_theta(X >= T) = alpha/2`` and the upper bound
    ``P_theta(X <= T) = alpha/2``; both are increasing/decreasing in ``theta``.
    Brackets grow by doubling from ``T +/- tau``; an endpoint not bracketed
    within ``T +/- reach * tau`` is reported as infinite.
    """
    if not interval.feasible:
        raise InferenceError("truncation interval is infeasible")
    if not 0.0 < alpha <= 0.5:
        raise ValueError("alpha must lie in (0, 0.5]")
    a, b = interval.lower, interval.upper
    half = alpha / 2.0
    tol = 1e-8 * tau

    def upper_gap(theta):  # increasing in theta
        return _tails(T, theta, tau, a, b)[1] - half

    def lower_gap(theta):  # decreasing in theta, so negate
        return half - _tails(T, theta, tau, a, b)[0]

    def endpoint(gap, infinite_side):
        # gap is increasing in theta; the root lies where it crosses zero
        limits = {infinite_side: reach * tau, -infinite_side: 1e6 * max(reach * tau, abs(T) + tau)}
        ends = {}
        for side in (-1, 1):
            step = tau
            theta = T + side * step
            while (gap(theta) > 0) if side < 0 else (gap(theta) < 0):
                if step >= limits[side]:
                    if side == infinite_side:
                        return side * math.inf
                    raise InferenceError("confidence bound could not be bracketed")
                step = min(2 * step, limits[side])
                theta = T + side * step
            ends[side] = theta
        return _bisect(gap, ends[-1], ends[1], tol)

    return endpoint(upper_gap, -1), endpoint(lower_gap, 1)


# ---------------------------------------------------------------------------
# per-feature summaries


def _exact_fit(sigma2: float, df: int, y) -> bool:
    """Residual sum of squares at round-off level relative to ``||y||^2``."""
    return not sigma2 * df > 1e-20 * float(np.dot(y, y))


def truncated_normal_inference(outcome: SelectionOutcome, y, alpha: float = 0.05,
                               sigma2: float | None = None) -> list[SelectiveSummary]:
    """Selective p-value and interval for every selected coefficient."""
    if not outcome.has_polyhedron:
        raise InferenceError(f"selector {outcome.method!r} carries no selection polyhedron")
    y = np.asarray(y, dtype=float)
    s2 = outcome.sigma2_hat if sigma2 is None else sigma2
    if not s2 > 0 or (sigma2 is None and _exact_fit(s2, outcome.df_resid, y)):
        raise InferenceError("residual variance is zero; the surrogate fits exactly")
    sigma = math.sqrt(s2)
    out = []
    for k in range(len(outcome.S)):
        v = outcome.contrasts[k]
        T = float(v @ y)
        tau = sigma * float(np.linalg.norm(v))
        interval = truncation_bounds(outcome.A, outcome.b, v, y)
        p = selective_p(T, tau, interval, 0.0, "two")
        lo, hi = selective_ci(T, tau, interval, alpha)
        out.append(SelectiveSummary(T, float(outcome.beta_hat[k]), tau, p, lo, hi, alpha,
                                    "truncated_normal", None, interval.lower, interval.upper))
    return out


def t_summary(coef: float, se: float, df: int, alpha: float = 0.05, mode: str = "split_t") -> SelectiveSummary:
    """Classical t-test and interval for one coefficient."""
    if not se > 0:
        raise InferenceError("standard error is zero; the fit is exact")
    t = coef / se
    p = float(2.0 * stats.t.sf(abs(t), df))
    q = float(stats.t.ppf(1.0 - alpha / 2.0, df))
    return SelectiveSummary(coef, coef, se, p, coef - q * se, coef + q * se, alpha, mode, int(df))


def split_t_inference(X_S, y, alpha: float = 0.05, mode: str = "split_t") -> list[SelectiveSummary]:
    """OLS refit with t p-values and intervals on ``n - |S| - 1`` degrees of freedom."""
    y = np.asarray(y, dtype=float)
    fit = refit_ols(X_S, y)
    if _exact_fit(fit.sigma2_hat, fit.df_resid, y):
        raise InferenceError("residual variance is zero; the surrogate fits exactly")
    se = np.sqrt(fit.sigma2_hat * np.diag(fit.xtx_inv))
    return [t_summary(float(c), float(s), fit.df_resid, alpha, mode) for c, s in zip(fit.beta_hat, se)]


def naive_inference(X_S, y, alpha: float = 0.05) -> list[SelectiveSummary]:
    return split_t_inference(X_S, y, alpha, mode="naive")
