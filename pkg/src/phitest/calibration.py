"""Monte-Carlo checks of the selective inference layer.

* ``null_p``: rejection rates of selective p-values under a global null.
* ``coverage``: coverage of selective intervals for ``theta_j = v_j' mu``.
* ``naive_compare``: naive t-tests on the selection rows against split-sample
  t-tests on held-out rows, both under the null.

P-values are pooled over every selected coefficient of every replicate; the
binomial standard deviation uses that pooled count.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import sub_seed
from .selection import stepwise_first_k
from .selinf import InferenceError, naive_inference, split_t_inference, truncated_normal_inference


@dataclass
class CalibrationResult:
    mode: str
    replicates: int
    n_values: int
    rows: list[dict] = field(default_factory=list)  # one per checked quantity
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.rows)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _design(rng, n, p):
    return rng.standard_normal((n, p))


def _binomial_row(name, level, hits, N, k_sd=2.0):
    rate = hits / N if N else float("nan")
    sd = math.sqrt(level * (1 - level) / N) if N else float("nan")
    return {"quantity": name, "level": level, "rate": rate, "sd": sd, "band_low": level - k_sd * sd,
            "band_high": level + k_sd * sd, "pass": bool(N and abs(rate - level) <= k_sd * sd)}


def null_p(replicates: int = 2000, n: int = 100, p: int = 10, K: int = 3, sigma: float = 1.0,
           levels=(0.01, 0.05, 0.1, 0.2), seed: int = 0, known_sigma: bool = False) -> CalibrationResult:
    """Stepwise first-K on pure noise; selective p-values should be uniform."""
    pvals, skipped = [], 0
    for r in range(replicates):
        rng = np.random.default_rng(sub_seed(seed, r))
        X = _design(rng, n, p)
        y = sigma * rng.standard_normal(n)
        try:
            out = stepwise_first_k(X, y, K)
            summ = truncated_normal_inference(out, y, sigma2=sigma**2 if known_sigma else None)
        except (InferenceError, ValueError):
            skipped += 1
            continue
        pvals.extend(s.p_value for s in summ)
    pvals = np.asarray(pvals)
    res = CalibrationResult("null_p", replicates, len(pvals), skipped=skipped)
    for a in levels:
        res.rows.append(_binomial_row("P(p_sel <= alpha)", a, int(np.sum(pvals <= a)), len(pvals)))
    return res


def coverage(replicates: int = 2000, n: int = 100, p: int = 10, K: int = 3, beta=None, sigma: float = 1.0,
             alpha: float = 0.05, seed: int = 0, threshold: float | None = None) -> CalibrationResult:
    """Coverage of selective intervals for the projected target ``v_j' X beta``."""
    beta = np.r_[1.0, 0.5, 0.25, np.zeros(p - 3)] if beta is None else np.asarray(beta, dtype=float)
    threshold = 1 - alpha - 0.01 if threshold is None else threshold
    hits = total = skipped = 0
    for r in range(replicates):
        rng = np.random.default_rng(sub_seed(seed, r))
        X = _design(rng, n, p)
        mu = X @ beta
        y = mu + sigma * rng.standard_normal(n)
        try:
            out = stepwise_first_k(X, y, K)
            summ = truncated_normal_inference(out, y, alpha)
        except (InferenceError, ValueError):
            skipped += 1
            continue
        for k, s in enumerate(summ):
            theta = float(out.contrasts[k] @ mu)
            hits += s.ci_low <= theta <= s.ci_high
            total += 1
    rate = hits / total if total else float("nan")
    sd = math.sqrt(rate * (1 - rate) / total) if total else float("nan")
    res = CalibrationResult("coverage", replicates, total, skipped=skipped)
    res.rows.append({"quantity": "coverage", "level": 1 - alpha, "rate": rate, "sd": sd,
                     "band_low": threshold, "band_high": 1.0, "pass": bool(total and rate >= threshold)})
    return res


def naive_compare(replicates: int = 2000, n: int = 200, p: int = 10, K: int = 3, level: float = 0.05,
                  seed: int = 0, naive_floor: float = 0.08, split_band=(0.035, 0.065)) -> CalibrationResult:
    """Null data, stepwise on the first half; naive t-tests reuse that half, split
    t-tests use the second half."""
    naive_p, split_p, skipped = [], [], 0
    half = n // 2
    for r in range(replicates):
        rng = np.random.default_rng(sub_seed(seed, r))
        X = _design(rng, n, p)
        y = rng.standard_normal(n)
        Xa, ya, Xb, yb = X[:half], y[:half], X[half:], y[half:]
        try:
            S = list(stepwise_first_k(Xa, ya, K, check_event=False).S)
            naive_p.extend(s.p_value for s in naive_inference(Xa[:, S], ya, level))
            split_p.extend(s.p_value for s in split_t_inference(Xb[:, S], yb, level))
        except (InferenceError, ValueError):
            skipped += 1
    naive_p, split_p = np.asarray(naive_p), np.asarray(split_p)
    res = CalibrationResult("naive_compare", replicates, len(split_p), skipped=skipped)
    nrate = float(np.mean(naive_p <= level))
    srate = float(np.mean(split_p <= level))
    res.rows.append({"quantity": "naive P(p <= level | selected)", "level": level, "rate": nrate,
                     "sd": math.sqrt(nrate * (1 - nrate) / len(naive_p)), "band_low": naive_floor,
                     "band_high": 1.0, "pass": bool(nrate > naive_floor)})
    res.rows.append({"quantity": "split P(p <= level)", "level": level, "rate": srate,
                     "sd": math.sqrt(level * (1 - level) / len(split_p)), "band_low": split_band[0],
                     "band_high": split_band[1], "pass": bool(split_band[0] <= srate <= split_band[1])})
    return res


MODES = {"null_p": null_p, "coverage": coverage, "naive_compare": naive_compare}


def run(mode: str, **kw) -> CalibrationResult:
    try:
        fn = MODES[mode]
    except KeyError:
        raise ValueError(f"unknown calibration mode {mode!r}; choose from {sorted(MODES)}") from None
    return fn(**kw)
