import json
from dataclasses import replace

import numpy as np
import pytest

from phitest.data import Dataset, make_split, sub_seed, synth_gaussian
from phitest.pipeline import (
    FeatureTable,
    PhiTestConfig,
    STREAMS,
    PipelineError,
    make_context,
    ablation_suite,
    baseline_shap_ht,
    baseline_spvim_boot,
    baseline_stable_shap,
    baseline_topk,
    benchmark,
    default_M,
    fidelity,
    jaccard,
    mean_pairwise_jaccard,
    phi_test,
    robustness,
    stability,
)
from phitest.predictors import FunctionPredictor, LinearPredictor, fit_gbt, fit_linear
from phitest.shapley import ShapMatrix, top_m


def shap_of(phi):
    return ShapMatrix(np.asarray(phi, dtype=float), 0.0, "exact")


@pytest.fixture(scope="module")
def linear_case():
    d = synth_gaussian(500, 5, [0.0, 1.0, -0.8, 0.0, 0.0], 0.1, seed=2)
    split = make_split(d.n, 4)
    f = fit_linear(d.X[split.train_idx], d.y[split.train_idx])
    return d, split, f


@pytest.fixture(scope="module")
def gbt_case():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((300, 6))
    y = 2 * X[:, 0] + np.sin(2 * X[:, 1]) + X[:, 2] * X[:, 3] + 0.3 * rng.standard_normal(300)
    d = Dataset("g", tuple(f"f{j}" for j in range(6)), X, y)
    split = make_split(d.n, 1)
    f = fit_gbt(d.X[split.train_idx], d.y[split.train_idx], n_trees=30, seed=0)
    return d, split, f


def test_default_screening_size():
    assert default_M(8) == 7 and default_M(9) == 7 and default_M(13) == 10 and default_M(5) == 5


def test_planted_linear_split_mode(linear_case):
    d, split, f = linear_case
    t = phi_test(f, d, split, PhiTestConfig(M=5, K=2))
    assert set(t.selected) == {1, 2}
    for j in (1, 2):
        assert t.rows[j].p_value < 0.01 and t.rows[j].naive is not None


def test_k_zero_table(linear_case):
    d, split, f = linear_case
    t = phi_test(f, d, split, PhiTestConfig(M=3, K=0))
    assert t.selected == [] and not any(r.selected for r in t.rows)
    assert abs(t.residual_shap - sum(r.shap for r in t.rows)) < 1e-12


def test_table_invariants_and_json_round_trip(gbt_case):
    d, split, f = gbt_case
    t = phi_test(f, d, split, PhiTestConfig(K=3))
    assert len(t.rows) == d.p
    sel = sum(r.shap for r in t.rows if r.selected)
    assert abs(sel + t.residual_shap - t.shap_total) < 1e-12
    for r in t.rows:
        if not r.selected:
            assert r.coef is r.se is r.p_value is None
    back = FeatureTable.from_dict(json.loads(json.dumps(t.to_dict())))
    assert back == t
    assert t.provenance["M"] == 6 and t.provenance["selector"] == "lars"


def test_full_mode_rules(gbt_case):
    d, split, f = gbt_case
    with pytest.raises(PipelineError, match="polyhedron"):
        phi_test(f, d, split, PhiTestConfig(mode="full", selector="lars"))
    t = phi_test(f, d, split, PhiTestConfig(mode="full", selector="stepwise", K=2))
    assert t.mode == "full" and len(t.selected) == 2
    assert all(t.rows[j].naive is None for j in t.selected)


def test_config_bounds(gbt_case):
    d, split, f = gbt_case
    with pytest.raises(PipelineError):
        phi_test(f, d, split, PhiTestConfig(M=7))
    with pytest.raises(PipelineError):
        phi_test(f, d, split, PhiTestConfig(M=3, K=4))
    whole = make_split(d.n, 1, split_sample=False)
    with pytest.raises(PipelineError, match="split mode"):
        phi_test(f, d, whole, PhiTestConfig(K=2))


def test_determinism(gbt_case):
    d, split, f = gbt_case
    a = phi_test(f, d, split, PhiTestConfig(K=3, seed=5))
    b = phi_test(f, d, split, PhiTestConfig(K=3, seed=5))
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_screening_invariance_under_score_rescaling(gbt_case):
    d, split, f = gbt_case
    from phitest.pipeline import compute_shap

    cfg = PhiTestConfig(K=3, M=4)
    X_sel = d.X[split.selection_idx]
    S = compute_shap(f, X_sel, X_sel, cfg)
    scaled = ShapMatrix(S.phi * 3.7, S.base_value, S.engine)
    a, b = phi_test(f, d, split, cfg, S), phi_test(f, d, split, cfg, scaled)
    assert a.selected == b.selected and a.screened == b.screened


def test_shap_rows_may_cover_whole_dataset(gbt_case):
    d, split, f = gbt_case
    from phitest.pipeline import compute_shap

    cfg = PhiTestConfig(K=2)
    full = compute_shap(f, d.X, d.X[split.selection_idx], cfg)
    t = phi_test(f, d, split, cfg, full)
    assert np.isclose(t.shap_total, full.rows(split.selection_idx).global_scores.sum())
    with pytest.raises(PipelineError):
        phi_test(f, d, split, cfg, full.rows([0, 1, 2]))


# --- baselines --------------------------------------------------------------------

def test_topk_delegates():
    S = shap_of([[3.0, -1.0, 2.0], [3.0, 1.0, -2.0]])
    assert baseline_topk(S, 2) == [0, 2]
    assert baseline_topk(S, 2) == sorted(top_m(S.global_scores, 2))


def test_spvim_zero_and_constant_columns():
    rng = np.random.default_rng(0)
    phi = np.column_stack([np.zeros(50), np.ones(50), rng.standard_normal(50) * 0.01])
    sel = baseline_spvim_boot(shap_of(phi), B=100, seed=1)
    assert 0 not in sel and 1 in sel
    with pytest.raises(PipelineError):
        baseline_spvim_boot(shap_of(phi), B=99)


def test_shap_ht_signed_mean_failure_mode():
    phi = np.column_stack([np.tile([5.0, -5.0], 20), np.full(40, 2.0), np.zeros(40)])
    assert baseline_shap_ht(shap_of(phi)) == [1]
    with pytest.raises(PipelineError):
        baseline_shap_ht(shap_of(phi[:2]))


def test_stable_shap_examples():
    rng = np.random.default_rng(0)
    phi = rng.standard_normal((60, 4)) * 0.1
    phi[:, 2] += 10
    assert baseline_stable_shap(shap_of(phi), 1, B=200, seed=0) == [2]
    one = baseline_stable_shap(shap_of(phi), 2, B=1, seed=3)
    assert len(one) == 2 and 2 in one
    # two near-tied features competing for the last slot
    tie = np.column_stack([np.full(80, 5.0), 1.0 + 0.3 * rng.standard_normal(80),
                           1.0 + 0.3 * rng.standard_normal(80), np.zeros(80)])
    sel = baseline_stable_shap(shap_of(tie), 2, B=200, seed=0)
    assert 0 in sel and len(sel) < 2
    with pytest.raises(PipelineError):
        baseline_stable_shap(shap_of(tie), 2, freq_threshold=0.0)


def test_planted_baselines_select_drivers():
    hits = {"spvim": 0, "ht": 0}
    for seed in range(20):
        d = synth_gaussian(200, 4, [1.5, 0.0, 0.0, 0.0], 0.2, seed=seed)
        f = LinearPredictor(0.0, np.array([1.5, 0.0, 0.0, 0.0]))
        # monotone effect centred away from zero so mean(phi) is nonzero
        S = shap_of(f.coef * (d.X - d.X.mean(0) + 0.5))
        hits["spvim"] += 0 in baseline_spvim_boot(S, seed=seed)
        hits["ht"] += 0 in baseline_shap_ht(S)
    assert hits["spvim"] / 20 > 0.95 and hits["ht"] / 20 > 0.9


# --- metrics ----------------------------------------------------------------------

def test_jaccard_conventions():
    assert jaccard(set(), set()) == 1.0
    assert jaccard({1}, set()) == 0.0
    assert jaccard({1, 2}, {3}) == 0.0


def test_stability_examples():
    assert mean_pairwise_jaccard([{1, 2}, {1, 2}, {1, 3}]) == 5 / 9
    assert stability(lambda s: {1, 2}, 4) == 1.0
    sets = {0: {1}, 1: {2}}
    assert stability(lambda s: sets[s], 2) == 0.0
    with pytest.raises(PipelineError):
        stability(lambda s: {1}, 1)


def test_robustness_examples():
    assert robustness({1, 2, 3, 4, 5}, {1, 2, 3, 4, 6}) == 4 / 6
    assert robustness({1, 2}, {1, 2}) == 1.0
    assert robustness(set(), {1}) == 0.0


def test_fidelity_examples():
    d = synth_gaussian(300, 4, [1.0, -1.0, 0.5, 0.0], 0.5, seed=3)
    split = make_split(d.n, 0)
    f = fit_linear(d.X[split.train_idx], d.y[split.train_idx])
    full = fidelity(f, d, split, range(4))
    assert abs(full.fidelity_pct - 100.0) < 1e-9
    empty = fidelity(f, d, split, [])
    assert empty.fidelity_pct == 0.0 and empty.r2_selected == 0.0
    bad = FunctionPredictor(lambda X: -10 * X[:, 0], 4)
    assert np.isnan(fidelity(bad, d, split, [0]).fidelity_pct)


def test_fidelity_negative_passes_through():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 2))
    y = X[:, 0] + 0.1 * rng.standard_normal(40)
    X[:, 1] = 0.0
    X[:8, 1] = 1.0  # spurious column that separates the first rows only
    d = Dataset("neg", ("a", "b"), X, y)
    split = make_split(40, 2)
    f = fit_linear(d.X[split.train_idx], d.y[split.train_idx])
    out = fidelity(f, d, split, [1])
    assert out.r2_selected < 0 and out.fidelity_pct < 0


def test_benchmark_and_ablation_shapes():
    d = synth_gaussian(200, 6, [2.0, -1.0, 1.0, 0, 0, 0], 0.5, seed=1)
    cfg = PhiTestConfig(K=3, spvim_B=100, stable_B=50)
    reps = benchmark(d, cfg, replicates=2)
    assert [r.method for r in reps] == ["phi-test", "SHAP-TopK", "SPVIM-Boot", "SHAP-HT", "StableSHAP"]
    for r in reps:
        assert r.sparsity == len(r.selected) and 0 <= r.stability <= 1 and 0 <= r.robustness <= 1
    top = reps[1]
    rep_seed = sub_seed(cfg.seed, 100)
    split = make_split(d.n, sub_seed(rep_seed, STREAMS["split"]), 0.8)
    ctx = make_context(d, "gbt", replace(cfg, seed=rep_seed), split)
    assert fidelity(ctx.f, d, split, top.selected).fidelity_pct == top.fidelity_pct
    again = benchmark(d, cfg, replicates=2)
    assert [r.to_dict() for r in again] == [r.to_dict() for r in reps]
    abl = ablation_suite(d, replace(cfg, M=6), replicates=2)
    assert len(abl) == 4
    by = {r.method: r for r in abl}
    assert by["SHAP + Lasso"].replicate_sets == by["Lasso-only"].replicate_sets
    assert set(by["Lasso-strong"].selected) <= set(by["SHAP + Lasso"].selected)
    assert top.fidelity_pct > 90
