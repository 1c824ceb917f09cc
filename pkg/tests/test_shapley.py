import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phitest.predictors import FunctionPredictor, LinearPredictor, fit_gbt
from phitest.shapley import (
    Background,
    ShapError,
    ShapMatrix,
    coalition_values,
    exact_shap,
    global_scores,
    kernel_shap,
    make_background,
    read_shap_csv,
    top_m,
    write_shap_csv,
)


def spliced_value(f, x, bg_rows, S):
    """Oracle: average of f with coordinates in S taken from x, rest from background."""
    Z = bg_rows.copy()
    Z[:, list(S)] = x[list(S)]
    return f.predict(Z).mean()


def permutation_shap(f, x, bg_rows):
    p = x.shape[0]
    phi = np.zeros(p)
    perms = list(itertools.permutations(range(p)))
    for perm in perms:
        before = []
        prev = spliced_value(f, x, bg_rows, before)
        for j in perm:
            before.append(j)
            cur = spliced_value(f, x, bg_rows, before)
            phi[j] += cur - prev
            prev = cur
    return phi / len(perms)


@pytest.fixture(scope="module")
def gbt3():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((80, 3))
    y = X[:, 0] * X[:, 1] + np.abs(X[:, 2])
    return fit_gbt(X, y, n_trees=15, max_depth=3, seed=2), X


def test_exact_matches_permutation_oracle(gbt3):
    f, X = gbt3
    bg = make_background(f, X, size=20, seed=1)
    S = exact_shap(f, X[:5], bg)
    for i in range(5):
        np.testing.assert_allclose(S.phi[i], permutation_shap(f, X[i], bg.rows), atol=1e-12)


def test_gbt_fast_path_matches_generic_splice(gbt3):
    f, X = gbt3
    bg = make_background(f, X, size=15, seed=0)
    generic = FunctionPredictor(f.predict, 3)
    masks = np.arange(8)
    np.testing.assert_allclose(coalition_values(f, X[:10], bg, masks),
                               coalition_values(generic, X[:10], bg, masks), atol=1e-12)


def test_linear_closed_form():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((40, 5))
    f = LinearPredictor(0.7, np.array([1.0, -2.0, 0.0, 3.0, 0.5]))
    bg = make_background(f, X, size=10, seed=4)
    S = exact_shap(f, X, bg)
    expected = f.coef * (X - bg.rows.mean(axis=0))
    assert np.max(np.abs(S.phi - expected)) < 1e-10


def test_constant_predictor():
    f = FunctionPredictor(lambda Z: np.full(Z.shape[0], 2.5), 3)
    X = np.random.default_rng(0).standard_normal((6, 3))
    S = exact_shap(f, X, make_background(f, X))
    assert S.base_value == 2.5
    np.testing.assert_array_equal(S.phi, 0)


def test_exact_limit():
    f = LinearPredictor(0.0, np.ones(21))
    X = np.zeros((2, 21))
    with pytest.raises(ShapError, match="kernel_shap"):
        exact_shap(f, X, Background(X, 0.0))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), p=st.integers(2, 6))
def test_efficiency_null_player_property(seed, p):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(p)
    w[-1] = 0.0  # last feature ignored

    def fn(Z):
        return np.tanh(Z @ w) + Z[:, 0] * Z[:, min(1, p - 1)] * (p > 2)

    f = FunctionPredictor(fn, p)
    X = rng.standard_normal((8, p))
    bg = make_background(f, rng.standard_normal((12, p)))
    S = exact_shap(f, X, bg)
    assert np.max(np.abs(S.efficiency_gap())) < 1e-8
    assert np.max(np.abs(S.phi[:, -1])) < 1e-10
    assert np.all(S.global_scores >= 0)


def test_symmetry_duplicated_columns():
    f = FunctionPredictor(lambda Z: np.sin(Z[:, 0] + Z[:, 1]) + Z[:, 2], 3)
    rng = np.random.default_rng(1)
    X = rng.standard_normal((10, 3))
    X[:, 1] = X[:, 0]
    bg = X[:6].copy()
    S = exact_shap(f, X, Background(bg, float(f.predict(bg).mean())))
    np.testing.assert_allclose(S.phi[:, 0], S.phi[:, 1], atol=1e-8)


@pytest.mark.parametrize("p", [3, 4, 5, 6, 7, 8])
def test_kernel_all_coalitions_equals_exact(p):
    rng = np.random.default_rng(p)
    X = rng.standard_normal((60, p))
    y = X[:, 0] * X[:, 1] + np.sin(X[:, -1]) + 0.1 * rng.standard_normal(60)
    f = fit_gbt(X, y, n_trees=10, max_depth=3, seed=p)
    bg = make_background(f, X, size=20, seed=p)
    E = exact_shap(f, X[:10], bg)
    K = kernel_shap(f, X[:10], bg, "all")
    assert np.max(np.abs(E.phi - K.phi)) < 1e-6
    assert np.max(np.abs(K.efficiency_gap())) < 1e-6


def test_kernel_p1_and_linear_p4():
    f1 = LinearPredictor(1.0, np.array([2.0]))
    X1 = np.arange(5.0)[:, None]
    bg1 = make_background(f1, X1)
    K1 = kernel_shap(f1, X1, bg1)
    np.testing.assert_array_equal(K1.phi[:, 0], f1.predict(X1) - bg1.base_value)
    f4 = LinearPredictor(0.0, np.array([1.0, -1.0, 2.0, 0.5]))
    X4 = np.random.default_rng(0).standard_normal((7, 4))
    bg4 = make_background(f4, X4)
    np.testing.assert_allclose(kernel_shap(f4, X4, bg4).phi, exact_shap(f4, X4, bg4).phi, atol=1e-6)


def test_kernel_sampled_seeds_differ_but_stay_efficient(gbt3):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 7))
    f = fit_gbt(X, X[:, 0] * X[:, 1] + X[:, 2], n_trees=10, seed=0)
    bg = make_background(f, X, size=10)
    a = kernel_shap(f, X[:5], bg, n_coalitions=40, seed=1)
    b = kernel_shap(f, X[:5], bg, n_coalitions=40, seed=2)
    assert not np.allclose(a.phi, b.phi)
    assert np.max(np.abs(a.efficiency_gap())) < 1e-8
    assert np.max(np.abs(b.efficiency_gap())) < 1e-8


def test_kernel_errors(gbt3):
    f, X = gbt3
    bg = make_background(f, X, size=5)
    with pytest.raises(ShapError):
        kernel_shap(f, X[:2], bg, ridge_eps=-1.0)
    with pytest.raises(ShapError, match="p \\+ 2"):
        kernel_shap(f, X[:2], bg, n_coalitions=4)
    from phitest.shapley import _sample_coalitions

    # paired sampling with p = 2 only ever yields size-1 coalitions
    with pytest.raises(ShapError, match="degenerate"):
        _sample_coalitions(2, 4, np.random.default_rng(0))


def test_global_scores_and_top_m():
    assert global_scores(np.array([[1.0], [-1.0]]))[0] == 1.0
    np.testing.assert_array_equal(global_scores(np.zeros((3, 2))), 0)
    assert set(top_m([3.0, 1.0, 2.0], 2)) == {0, 2}
    assert list(top_m([3.0, 1.0, 2.0], 2)) == [0, 2]
    assert sorted(top_m([1.0, 5.0, 2.0], 3)) == [0, 1, 2]
    assert list(top_m([2.0, 2.0, 1.0], 1)) == [0]
    for M in (0, 4):
        with pytest.raises(ShapError):
            top_m([1.0, 2.0, 3.0], M)


def test_table_style_global_score():
    phi = np.array([[0.4487 + 0.1], [-(0.4487 - 0.1)]])
    assert abs(global_scores(phi)[0] - 0.4487) < 1e-15


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=12), st.floats(1e-3, 1e3))
def test_top_m_scale_invariant(scores, c):
    M = max(1, len(scores) // 2)
    assert list(top_m(scores, M)) == list(top_m(np.asarray(scores) * c, M)) or \
        np.unique(scores).size < len(scores)


def test_csv_round_trip(tmp_path, gbt3):
    f, X = gbt3
    S = exact_shap(f, X[:6], make_background(f, X), ("a", "b", "c"))
    write_shap_csv(S, tmp_path / "s.csv")
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header == "a,b,c,base_value"
    back = read_shap_csv(tmp_path / "s.csv")
    assert back.phi.tobytes() == S.phi.tobytes()
    assert back.base_value == S.base_value
    assert back.global_scores.tobytes() == S.global_scores.tobytes()


def test_rows_subset_keeps_predictions(gbt3):
    f, X = gbt3
    S = exact_shap(f, X[:6], make_background(f, X))
    sub = S.rows([1, 3])
    assert isinstance(sub, ShapMatrix) and sub.n == 2
    np.testing.assert_array_equal(sub.predictions, S.predictions[[1, 3]])
