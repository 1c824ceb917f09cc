"""The phi-test pipeline, Shapley baselines and the evaluation protocol.

Seeds: every run has one master seed.  Sub-seeds come from
:func:`phitest.data.sub_seed` with the stream numbers in :data:`STREAMS`;
replicate ``r`` of an experiment uses ``sub_seed(seed, 100 + r)`` as its own
master seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from itertools import combinations
from typing import Callable, Iterable

import numpy as np
from scipy import stats

from .data import Dataset, SplitPlan, make_split, sub_seed
from .predictors import (
    ExternalPredictor,
    GbtConfig,
    Predictor,
    fit_gbt,
    fit_linear,
    predict_batch,
)
from .selection import SelectionOutcome, lars_first_k, lars_knots, lasso_fixed_lambda, refit_ols, run_selector
from .selinf import SelectiveSummary, naive_inference, split_t_inference, truncated_normal_inference
from .shapley import ShapMatrix, exact_shap, kernel_shap, make_background, top_m

logger = logging.getLogger(__name__)

STREAMS = {"split": 0, "background": 1, "coalitions": 2, "spvim": 3, "stable": 4, "backbone": 5}
METHODS = ("phi-test", "SHAP-TopK", "SPVIM-Boot", "SHAP-HT", "StableSHAP")
ABLATIONS = ("SHAP + Lasso", "Lasso-only", "SHAP + Stepwise", "Lasso-strong")


class PipelineError(ValueError):
    pass


def default_M(p: int) -> int:
    return min(p, 7 if p <= 9 else 10)


@dataclass(frozen=True)
class PhiTestConfig:
    M: int | None = None  # None: 7 when p <= 9, else 10
    K: int = 5
    selector: str = "lars"
    engine: str = "exact"
    alpha: float = 0.05
    mode: str = "split"
    seed: int = 0
    background_size: int = 100
    n_coalitions: int | str = "all"
    spvim_B: int = 200
    spvim_level: float = 0.05
    ht_level: float = 0.05
    stable_B: int = 200
    stable_threshold: float = 0.7
    strong_factor: float = 2.0

    def resolved_M(self, p: int) -> int:
        return default_M(p) if self.M is None else self.M


# ---------------------------------------------------------------------------
# table types


@dataclass
class FeatureRow:
    name: str
    index: int
    shap: float
    selected: bool = False
    coef: float | None = None
    se: float | None = None
    stat: float | None = None
    p_value: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    naive: dict | None = None


@dataclass
class FeatureTable:
    rows: list[FeatureRow]
    residual_shap: float
    mode: str
    alpha: float
    selected: list[int]  # original feature indices in selection order
    screened: list[int]
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureTable":
        d = dict(d)
        d["rows"] = [FeatureRow(**r) for r in d["rows"]]
        return cls(**d)

    @property
    def shap_total(self) -> float:
        return float(sum(r.shap for r in self.rows))


@dataclass
class MetricsReport:
    method: str
    fidelity_pct: float
    sparsity: int
    stability: float
    robustness: float
    r2_full: float
    r2_selected: float
    replicates: int
    selected: list[int] = field(default_factory=list)
    replicate_sets: list[list[int]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# stage 1 helpers


def compute_shap(f: Predictor, X_eval, X_background, cfg: PhiTestConfig, feature_names=None) -> ShapMatrix:
    bg = make_background(f, X_background, cfg.background_size, sub_seed(cfg.seed, STREAMS["background"]))
    if cfg.engine == "exact":
        return exact_shap(f, X_eval, bg, feature_names)
    if cfg.engine == "kernel":
        return kernel_shap(f, X_eval, bg, cfg.n_coalitions, 0.0, sub_seed(cfg.seed, STREAMS["coalitions"]), feature_names)
    raise PipelineError(f"unknown SHAP engine {cfg.engine!r}")


def _rows_for(split: SplitPlan, mode: str):
    if mode == "split":
        if len(split.selection_idx) == 0:
            raise PipelineError("split mode needs a split plan with selection/inference halves")
        sel, inf = split.selection_idx, split.inference_idx
        if np.intersect1d(sel, inf).size or np.intersect1d(split.train_idx, split.test_idx).size:
            raise PipelineError("selection, inference and test rows overlap")
        return sel, inf
    if mode == "full":
        return split.train_idx, split.train_idx
    raise PipelineError(f"unknown mode {mode!r}")


def _aligned_shap(shap: ShapMatrix, data: Dataset, rows) -> ShapMatrix:
    if shap.p != data.p:
        raise PipelineError(f"SHAP matrix has {shap.p} columns, dataset has {data.p} features")
    if shap.n == len(rows):
        return shap
    if shap.n == data.n:
        return shap.rows(rows)
    raise PipelineError(f"SHAP matrix has {shap.n} rows; expected {len(rows)} evaluation rows or {data.n} dataset rows")


def _select(selector, X, y, K) -> SelectionOutcome | None:
    if K == 0:
        return None
    return run_selector(selector, X, y, K)


# ---------------------------------------------------------------------------
# phi-test


def phi_test(f: Predictor, data: Dataset, split: SplitPlan, cfg: PhiTestConfig = PhiTestConfig(),
             shap: ShapMatrix | None = None) -> FeatureTable:
    """Screen by global SHAP score, select on the surrogate response, and attach
    selective (``mode="full"``) or split-sample (``mode="split"``) inference.

    ``shap`` may carry precomputed attributions, for the evaluation rows or for
    every dataset row; otherwise they are computed with ``cfg.engine``.
    """
    p = data.p
    M = cfg.resolved_M(p)
    if not 1 <= M <= p:
        raise PipelineError(f"M must lie in [1, {p}], got {M}")
    if not 0 <= cfg.K <= M:
        raise PipelineError(f"K must lie in [0, M={M}], got {cfg.K}")
    if cfg.mode == "full" and cfg.selector == "lars":
        raise PipelineError("full-sample inference needs a selection polyhedron; "
                            "LARS first-K has none, use --selector stepwise or lasso:<lambda>, or --mode split")
    sel_rows, inf_rows = _rows_for(split, cfg.mode)
    X_sel = data.X[sel_rows]

    if shap is None:
        shap = compute_shap(f, X_sel, X_sel, cfg, data.feature_names)
    else:
        shap = _aligned_shap(shap, data, sel_rows)
    scores = shap.global_scores
    S0 = top_m(scores, M)

    y_sur = predict_batch(f, X_sel)
    outcome = _select(cfg.selector, X_sel[:, S0], y_sur, cfg.K)
    S = [] if outcome is None else [int(S0[j]) for j in outcome.S]

    summaries: list[SelectiveSummary] = []
    naive: list[SelectiveSummary] = []
    if S:
        if cfg.mode == "full":
            summaries = truncated_normal_inference(outcome, y_sur, cfg.alpha)
        else:
            X_inf = data.X[inf_rows]
            summaries = split_t_inference(X_inf[:, S], predict_batch(f, X_inf), cfg.alpha)
            X_tr = data.X[split.train_idx]
            naive = naive_inference(X_tr[:, S], predict_batch(f, X_tr), cfg.alpha)

    rows = [FeatureRow(name, j, float(scores[j])) for j, name in enumerate(data.feature_names)]
    for k, j in enumerate(S):
        s = summaries[k]
        rows[j] = replace(rows[j], selected=True, coef=s.theta_hat, se=s.tau, stat=s.stat,
                          p_value=s.p_value, ci_low=s.ci_low, ci_high=s.ci_high,
                          naive=naive[k].to_dict() if naive else None)
    residual = float(sum(scores[j] for j in range(p) if j not in S))
    provenance = {
        "seed": cfg.seed, "selector": cfg.selector, "M": M, "K": cfg.K, "engine": shap.engine,
        "mode": cfg.mode, "n_selection": int(len(sel_rows)), "n_inference": int(len(inf_rows)),
        "flags": list(outcome.flags) if outcome is not None else [],
    }
    return FeatureTable(rows, residual, cfg.mode, cfg.alpha, S, [int(j) for j in S0], provenance)


# ---------------------------------------------------------------------------
# baselines


def baseline_topk(S: ShapMatrix, K: int) -> list[int]:
    if K == 0:
        return []
    return sorted(int(j) for j in top_m(S.global_scores, K))


def baseline_spvim_boot(S: ShapMatrix, B: int = 200, level: float = 0.05, seed: int = 0) -> list[int]:
    """Bootstrap standard error of each global score; keep features whose
    one-sided normal p-value for ``I_j / SE_j`` is below ``level``."""
    if B < 100:
        raise PipelineError("SPVIM-Boot needs B >= 100 bootstrap resamples")
    absphi = np.abs(S.phi)
    n = absphi.shape[0]
    idx = np.random.default_rng(seed).integers(0, n, size=(B, n))
    boot = absphi[idx].mean(axis=1)
    se = boot.std(axis=0, ddof=1)
    scores = S.global_scores
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, scores / se, np.where(scores > 0, np.inf, 0.0))
    pvals = stats.norm.sf(z)
    return [int(j) for j in np.flatnonzero(pvals < level)]


def baseline_shap_ht(S: ShapMatrix, level: float = 0.05) -> list[int]:
    """Bonferroni-corrected one-sample t-tests of ``mean(phi_j) = 0``."""
    n, p = S.phi.shape
    if n < 3:
        raise PipelineError("SHAP-HT needs at least 3 rows")
    mean = S.phi.mean(axis=0)
    sd = S.phi.std(axis=0, ddof=1)
    keep = []
    for j in range(p):
        if sd[j] <= 1e-14 * max(1.0, abs(mean[j])):
            pval = 0.0 if abs(mean[j]) > 1e-14 else 1.0
        else:
            pval = 2.0 * stats.t.sf(abs(mean[j]) / (sd[j] / math.sqrt(n)), n - 1)
        if pval < level / p:
            keep.append(j)
    return keep


def baseline_stable_shap(S: ShapMatrix, K: int, B: int = 200, freq_threshold: float = 0.7, seed: int = 0) -> list[int]:
    """Features whose top-K membership frequency over bootstrap resamples of
    the SHAP rows reaches ``freq_threshold``."""
    if not 0.0 < freq_threshold <= 1.0:
        raise PipelineError("freq_threshold must lie in (0, 1]")
    if B < 1:
        raise PipelineError("need at least one bootstrap resample")
    if K == 0:
        return []
    absphi = np.abs(S.phi)
    n, p = absphi.shape
    rng = np.random.default_rng(seed)
    counts = np.zeros(p)
    for _ in range(B):
        scores = absphi[rng.integers(0, n, size=n)].mean(axis=0)
        counts[top_m(scores, K)] += 1
    return [int(j) for j in np.flatnonzero(counts / B >= freq_threshold)]


# ---------------------------------------------------------------------------
# metrics


def r2_score(y, pred) -> float:
    y = np.asarray(y, dtype=float)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot if ss_tot > 0 else float("nan")


@dataclass(frozen=True)
class Fidelity:
    fidelity_pct: float
    r2_full: float
    r2_selected: float
    flag: str | None = None


def fidelity(f: Predictor, data: Dataset, split: SplitPlan, S_hat: Iterable[int]) -> Fidelity:
    """Test R^2 of an OLS model on ``S_hat`` relative to the black box's test R^2."""
    test, train = split.test_idx, split.train_idx
    if len(test) == 0:
        raise PipelineError("fidelity needs a nonempty test split")
    if set(map(int, test)) & set(map(int, split.selection_idx)):
        raise PipelineError("test rows overlap the selection rows")
    S_hat = sorted(int(j) for j in S_hat)
    y_test = data.y[test]
    r2_full = r2_score(y_test, predict_batch(f, data.X[test]))
    if S_hat:
        ols = fit_linear(data.X[train][:, S_hat], data.y[train])
        r2_sel = r2_score(y_test, ols.predict(data.X[test][:, S_hat]))
    else:
        r2_sel = 0.0
    if not r2_full > 0:
        return Fidelity(float("nan"), r2_full, r2_sel, "r2_full_nonpositive")
    return Fidelity(100.0 * r2_sel / r2_full, r2_full, r2_sel)


def _jaccard_exact(a: set, b: set) -> Fraction:
    if not a and not b:
        return Fraction(1)
    return Fraction(len(a & b), len(a | b))


def jaccard(a, b) -> float:
    """Jaccard index; two empty sets count as identical (1.0)."""
    return float(_jaccard_exact(set(a), set(b)))


def mean_pairwise_jaccard(sets) -> float:
    """Average Jaccard over all pairs, accumulated in exact rationals."""
    sets = [set(s) for s in sets]
    if len(sets) < 2:
        raise PipelineError("stability needs at least two selections")
    pairs = list(combinations(sets, 2))
    return float(sum((_jaccard_exact(a, b) for a, b in pairs), Fraction(0)) / len(pairs))


def stability(run: Callable[[int], Iterable[int]], R: int, seeds=None) -> float:
    """Average pairwise Jaccard similarity of ``run(seed)`` over ``R`` seeds."""
    if R < 2:
        raise PipelineError("stability needs R >= 2")
    seeds = list(range(R)) if seeds is None else list(seeds)[:R]
    return mean_pairwise_jaccard([run(s) for s in seeds])


def robustness(S_a, S_b) -> float:
    return jaccard(S_a, S_b)


# ---------------------------------------------------------------------------
# backbones and experiment harness


def fit_backbone(name: str, X, y, seed: int = 0, data_X=None) -> Predictor:
    """``linear``, ``gbt`` (100 trees, depth 3), ``gbt-shallow`` (depth 2,
    80% row subsampling) or ``external:<path>``."""
    if name == "linear":
        return fit_linear(X, y)
    if name == "gbt":
        return fit_gbt(X, y, GbtConfig(seed=seed))
    if name == "gbt-shallow":
        return fit_gbt(X, y, GbtConfig(max_depth=2, subsample=0.8, seed=seed))
    if name.startswith("external:"):
        from .predictors import external_predictor

        return external_predictor(name.split(":", 1)[1], data_X)
    raise PipelineError(f"unknown backbone {name!r}")


@dataclass
class RunContext:
    """Everything one replicate's selectors may use."""

    f: Predictor
    data: Dataset
    split: SplitPlan
    cfg: PhiTestConfig
    shap: ShapMatrix  # on the selection rows

    @property
    def X_sel(self):
        return self.data.X[self.split.selection_idx]


def _phi_selector(ctx: RunContext) -> list[int]:
    return sorted(phi_test(ctx.f, ctx.data, ctx.split, ctx.cfg, ctx.shap).selected)


BASELINES: dict[str, Callable[[RunContext], list[int]]] = {
    "phi-test": _phi_selector,
    "SHAP-TopK": lambda c: baseline_topk(c.shap, c.cfg.K),
    "SPVIM-Boot": lambda c: baseline_spvim_boot(c.shap, c.cfg.spvim_B, c.cfg.spvim_level,
                                                sub_seed(c.cfg.seed, STREAMS["spvim"])),
    "SHAP-HT": lambda c: baseline_shap_ht(c.shap, c.cfg.ht_level),
    "StableSHAP": lambda c: baseline_stable_shap(c.shap, c.cfg.K, c.cfg.stable_B, c.cfg.stable_threshold,
                                                 sub_seed(c.cfg.seed, STREAMS["stable"])),
}


def _screened_lars(ctx: RunContext, M: int) -> tuple[list[int], np.ndarray, np.ndarray]:
    S0 = top_m(ctx.shap.global_scores, M)
    X = ctx.X_sel[:, S0]
    y = predict_batch(ctx.f, ctx.X_sel)
    if ctx.cfg.K == 0:
        return [], S0, y
    out = lars_first_k(X, y, ctx.cfg.K)
    return sorted(int(S0[j]) for j in out.S), S0, y


def _lasso_strong(ctx: RunContext) -> list[int]:
    M = ctx.cfg.resolved_M(ctx.data.p)
    S0 = top_m(ctx.shap.global_scores, M)
    X = ctx.X_sel[:, S0]
    y = predict_batch(ctx.f, ctx.X_sel)
    if ctx.cfg.K == 0:
        return []
    knots = lars_knots(X, y, ctx.cfg.K)
    lam = ctx.cfg.strong_factor * knots[-1]
    out = lasso_fixed_lambda(X, y, lam, check_event=False)
    return sorted(int(S0[j]) for j in out.S)


ABLATION_SELECTORS: dict[str, Callable[[RunContext], list[int]]] = {
    "SHAP + Lasso": lambda c: _screened_lars(c, c.cfg.resolved_M(c.data.p))[0],
    "Lasso-only": lambda c: _screened_lars(c, c.data.p)[0],
    "SHAP + Stepwise": lambda c: sorted(
        phi_test(c.f, c.data, c.split, replace(c.cfg, selector="stepwise"), c.shap).selected),
    "Lasso-strong": _lasso_strong,
}


def make_context(data: Dataset, backbone: str, cfg: PhiTestConfig, split: SplitPlan,
                 shap: ShapMatrix | None = None) -> RunContext:
    train = split.train_idx
    f = fit_backbone(backbone, data.X[train], data.y[train], sub_seed(cfg.seed, STREAMS["backbone"]), data.X)
    X_sel = data.X[split.selection_idx]
    if shap is None:
        if isinstance(f, ExternalPredictor):
            raise PipelineError("an external backbone needs precomputed SHAP values")
        shap = compute_shap(f, X_sel, X_sel, cfg, data.feature_names)
    else:
        shap = _aligned_shap(shap, data, split.selection_idx)
    return RunContext(f, data, split, cfg, shap)


def evaluate_methods(
    data: Dataset,
    selectors: dict[str, Callable[[RunContext], list[int]]],
    cfg: PhiTestConfig = PhiTestConfig(),
    backbone: str = "gbt",
    backbone2: str = "gbt-shallow",
    replicates: int = 5,
    train_fraction: float = 0.8,
    shap: ShapMatrix | None = None,
) -> list[MetricsReport]:
    """Fidelity and sparsity on replicate 0, stability over ``replicates``
    resampled splits (backbone refit each time), robustness against a second
    backbone on replicate 0's split."""
    if replicates < 2:
        raise PipelineError("stability needs at least 2 replicates")
    sets = {name: [] for name in selectors}
    contexts = []
    for r in range(replicates):
        rep_seed = sub_seed(cfg.seed, 100 + r)
        rcfg = replace(cfg, seed=rep_seed)
        split = make_split(data.n, sub_seed(rep_seed, STREAMS["split"]), train_fraction, split_sample=True)
        ctx = make_context(data, backbone, rcfg, split, shap)
        contexts.append(ctx)
        for name, fn in selectors.items():
            sets[name].append(fn(ctx))
    base = contexts[0]
    alt = make_context(data, backbone2, replace(base.cfg, seed=sub_seed(base.cfg.seed, 7)), base.split)
    reports = []
    for name, fn in selectors.items():
        S_main = sets[name][0]
        fid = fidelity(base.f, data, base.split, S_main)
        reports.append(MetricsReport(
            method=name,
            fidelity_pct=fid.fidelity_pct,
            sparsity=len(S_main),
            stability=mean_pairwise_jaccard(sets[name]),
            robustness=robustness(S_main, fn(alt)),
            r2_full=fid.r2_full,
            r2_selected=fid.r2_selected,
            replicates=replicates,
            selected=list(S_main),
            replicate_sets=[list(s) for s in sets[name]],
            flags=[fid.flag] if fid.flag else [],
        ))
    return reports


def benchmark(data: Dataset, cfg: PhiTestConfig = PhiTestConfig(), backbone: str = "gbt",
              backbone2: str = "gbt-shallow", replicates: int = 5, methods=METHODS, **kw) -> list[MetricsReport]:
    sel = {m: BASELINES[m] for m in methods}
    return evaluate_methods(data, sel, cfg, backbone, backbone2, replicates, **kw)


def ablation_suite(data: Dataset, cfg: PhiTestConfig = PhiTestConfig(), backbone: str = "gbt",
                   backbone2: str = "gbt-shallow", replicates: int = 5, **kw) -> list[MetricsReport]:
    """Vary only the selection step: SHAP+Lasso, Lasso-only (no screening),
    SHAP+Stepwise, and a lasso at ``strong_factor`` times the K-th LARS knot."""
    return evaluate_methods(data, ABLATION_SELECTORS, cfg, backbone, backbone2, replicates, **kw)
