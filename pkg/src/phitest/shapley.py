"""Interventional Shapley attributions: exact enumeration and KernelSHAP.

The value of a coalition ``S`` at a point ``x`` is the mean prediction over
background rows ``b`` spliced as ``(x_S, b_{-S})``.  Coalitions are encoded as
integer bit masks, bit ``j`` set meaning feature ``j`` is in ``S``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .predictors import GbtPredictor, Predictor

MAX_EXACT_FEATURES = 20
_ROWS_PER_CALL = 250_000


class ShapError(ValueError):
    pass


@dataclass(frozen=True)
class Background:
    rows: np.ndarray
    base_value: float

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ShapError("background needs at least one row")
        if not np.isfinite(self.base_value):
            raise ShapError("background base value is not finite")
        object.__setattr__(self, "rows", rows)


def make_background(f: Predictor, X, size: int = 100, seed: int = 0) -> Background:
    """Seeded subsample of ``size`` rows of ``X`` (all rows if fewer)."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] > size:
        idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], size=size, replace=False))
        X = X[idx]
    return Background(X, float(np.mean(f.predict(X))))


@dataclass(frozen=True)
class ShapMatrix:
    phi: np.ndarray
    base_value: float
    engine: str
    predictions: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = None
    global_scores: np.ndarray = field(init=False)

    def __post_init__(self):
        phi = np.ascontiguousarray(self.phi, dtype=float)  # fixes the summation order
        if phi.ndim != 2:
            raise ShapError("phi must be a 2-d matrix")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "global_scores", global_scores(phi))

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @property
    def p(self) -> int:
        return self.phi.shape[1]

    def efficiency_gap(self) -> np.ndarray:
        """``sum_j phi_ij + base - f(x_i)`` per row."""
        if self.predictions is None:
            raise ShapError("predictions were not recorded")
        return self.phi.sum(axis=1) + self.base_value - self.predictions

    def rows(self, idx) -> "ShapMatrix":
        idx = np.asarray(idx, dtype=int)
        preds = None if self.predictions is None else self.predictions[idx]
        return ShapMatrix(self.phi[idx], self.base_value, self.engine, preds, self.feature_names)


def global_scores(phi) -> np.ndarray:
    """Mean absolute attribution per feature."""
    phi = np.ascontiguousarray(getattr(phi, "phi", phi), dtype=float)
    if phi.shape[0] < 1:
        raise ShapError("global scores need at least one row")
    return np.abs(phi).mean(axis=0)


def top_m(scores, M: int) -> np.ndarray:
    """Indices of the ``M`` largest scores, in descending-score order.

    Ties go to the lower feature index.
    """
    scores = np.asarray(scores, dtype=float)
    p = scores.shape[0]
    if not 1 <= M <= p:
        raise ShapError(f"M must lie in [1, {p}], got {M}")
    order = np.lexsort((np.arange(p), -scores))
    return order[:M]


# ---------------------------------------------------------------------------
# coalition values


def _masks_to_bool(masks, p):
    masks = np.asarray(masks, dtype=np.int64)
    return ((masks[:, None] >> np.arange(p)) & 1).astype(bool)


def _generic_values(f: Predictor, X, bg, masks):
    n, p = X.shape
    B = bg.shape[0]
    inside = _masks_to_bool(masks, p)
    out = np.empty((n, len(masks)))
    step = max(1, _ROWS_PER_CALL // max(1, n * B))
    for start in range(0, len(masks), step):
        block = inside[start : start + step]
        hybrid = np.where(block[:, None, None, :], X[None, :, None, :], bg[None, None, :, :])
        pred = f.predict(hybrid.reshape(-1, p)).reshape(block.shape[0], n, B)
        out[:, start : start + block.shape[0]] = pred.mean(axis=2).T
    return out


def _gbt_values(f: GbtPredictor, X, bg, masks):
    """Closed-form interventional values for a tree ensemble.

    A leaf is reached by the spliced row iff ``x`` meets the leaf's conditions
    on features in ``S`` and the background row meets the rest, so each leaf
    contributes ``value * 1[x ok on S] * mean_b 1[b ok off S]``; that depends
    on ``S`` only through its overlap with the leaf's features.
    """
    n, p = X.shape
    masks = np.asarray(masks, dtype=np.int64)
    groups: dict[tuple, np.ndarray] = {}
    for tree in f.trees:
        for leaf, path in tree.leaf_paths():
            feats = tuple(sorted({c[0] for c in path}))
            k = len(feats)
            x_ok = np.stack([(X[:, c[0]] <= c[1]) == c[2] for c in path], axis=1) if path else np.ones((n, 0), bool)
            b_ok = np.stack([(bg[:, c[0]] <= c[1]) == c[2] for c in path], axis=1) if path else np.ones((len(bg), 0), bool)
            local = np.array([feats.index(c[0]) for c in path], dtype=int)
            table = np.empty((n, 1 << k))
            for pat in range(1 << k):
                on = ((pat >> local) & 1).astype(bool)
                xpart = x_ok[:, on].all(axis=1)
                bfrac = b_ok[:, ~on].all(axis=1).mean()
                table[:, pat] = xpart * bfrac
            acc = groups.get(feats)
            contrib = f.learning_rate * tree.value[leaf] * table
            groups[feats] = contrib if acc is None else acc + contrib
    out = np.full((n, len(masks)), f.base_score)
    for feats, table in groups.items():
        pat = np.zeros(len(masks), dtype=np.int64)
        for i, j in enumerate(feats):
            pat |= ((masks >> j) & 1) << i
        out += table[:, pat]
    return out


def coalition_values(f: Predictor, X, bg: Background, masks) -> np.ndarray:
    """``v_x(S)`` for every row of ``X`` (rows) and coalition mask (columns)."""
    X = np.asarray(X, dtype=float)
    if isinstance(f, GbtPredictor):
        return _gbt_values(f, X, bg.rows, masks)
    return _generic_values(f, X, bg.rows, masks)


def _popcount(masks):
    masks = np.asarray(masks, dtype=np.int64)
    return np.array([bin(int(m)).count("1") for m in masks], dtype=int)


# ---------------------------------------------------------------------------
# engines


def exact_shap(f: Predictor, X_eval, bg: Background, feature_names=None) -> ShapMatrix:
    """Shapley values by full enumeration of the ``2^p`` coalitions."""
    X = np.asarray(X_eval, dtype=float)
    n, p = X.shape
    if p > MAX_EXACT_FEATURES:
        raise ShapError(f"exact enumeration is limited to p <= {MAX_EXACT_FEATURES}; use kernel_shap")
    all_masks = np.arange(1 << p, dtype=np.int64)
    v = coalition_values(f, X, bg, all_masks)
    v[:, 0] = bg.base_value
    size = _popcount(all_masks)
    weight = np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)])
    phi = np.empty((n, p))
    for j in range(p):
        without = all_masks[(all_masks >> j) & 1 == 0]
        phi[:, j] = (v[:, without | (1 << j)] - v[:, without]) @ weight[size[without]]
    return ShapMatrix(phi, bg.base_value, "exact", f.predict(X), _names(feature_names))


def _kernel_mass(p, s):
    return (p - 1) / (s * (p - s))


def _sample_coalitions(p, budget, rng):
    """Paired, size-stratified coalition sample with per-coalition weights."""
    n_pairs = budget // 2
    strata = list(range(1, p // 2 + 1))
    mass = np.array([_kernel_mass(p, s) * (1 if 2 * s == p else 2) for s in strata])
    cap = np.array([math.comb(p, s) // (2 if 2 * s == p else 1) for s in strata])
    alloc = np.zeros(len(strata), dtype=int)
    remaining = n_pairs
    open_ = np.ones(len(strata), dtype=bool)
    while remaining > 0 and open_.any():
        share = mass * open_ / (mass * open_).sum() * remaining
        add = np.floor(share).astype(int)
        leftover = remaining - add.sum()
        for i in np.argsort(-(share - add), kind="stable")[:leftover]:
            add[i] += 1
        alloc = np.minimum(alloc + add, cap)
        open_ = alloc < cap
        remaining = n_pairs - alloc.sum()
    full = (1 << p) - 1
    masks, sizes = [], []
    for s, k in zip(strata, alloc):
        if k == 0:
            continue
        chosen = _distinct_subsets(p, s, int(k), rng)
        for m in chosen:
            masks += [m, full ^ m]
            sizes += [s, p - s]
    masks = np.array(masks, dtype=np.int64)
    sizes = np.array(sizes, dtype=int)
    if len(np.unique(sizes)) < 2:
        raise ShapError("coalition sample is degenerate (all coalitions have the same size)")
    counts = {s: int((sizes == s).sum()) for s in np.unique(sizes)}
    weights = np.array([_kernel_mass(p, s) / counts[s] for s in sizes])
    return masks, weights


def _distinct_subsets(p, s, k, rng):
    """``k`` distinct size-``s`` masks; for ``2s == p`` also distinct up to complement."""
    full = (1 << p) - 1
    half = 2 * s == p
    total = math.comb(p, s)
    if total <= 50_000:
        pool = [sum(1 << j for j in c) for c in itertools.combinations(range(p), s)]
        if half:
            pool = [m for m in pool if m < full ^ m]
        return [pool[i] for i in np.sort(rng.choice(len(pool), size=k, replace=False))]
    seen, out = set(), []
    while len(out) < k:
        m = sum(1 << int(j) for j in rng.choice(p, size=s, replace=False))
        key = min(m, full ^ m) if half else m
        if key not in seen:
            seen.add(key)
            out.append(m)
    return out


def kernel_shap(
    f: Predictor,
    X_eval,
    bg: Background,
    n_coalitions: int | str | None = "all",
    ridge_eps: float = 0.0,
    seed: int = 0,
    feature_names=None,
) -> ShapMatrix:
    """KernelSHAP with the efficiency constraint imposed exactly.

    Minimizes the Shapley-kernel weighted squared error over the chosen
    coalitions subject to ``sum(phi) = f(x) - base``.  With all ``2^p - 2``
    non-trivial coalitions this reproduces the exact Shapley values.
    """
    X = np.asarray(X_eval, dtype=float)
    n, p = X.shape
    if ridge_eps < 0:
        raise ShapError("ridge_eps must be non-negative")
    fx = f.predict(X)
    delta = fx - bg.base_value
    if p == 1:
        return ShapMatrix(delta[:, None].copy(), bg.base_value, "kernel", fx, _names(feature_names))
    n_total = (1 << p) - 2
    if n_coalitions in (None, "all") or int(n_coalitions) >= n_total:
        masks = np.arange(1, n_total + 1, dtype=np.int64)
        size = _popcount(masks)
        weights = np.array([_kernel_mass(p, s) / math.comb(p, s) for s in size])
    else:
        if int(n_coalitions) < p + 2:
            raise ShapError(f"need at least p + 2 = {p + 2} sampled coalitions")
        masks, weights = _sample_coalitions(p, int(n_coalitions), np.random.default_rng(seed))
    Z = _masks_to_bool(masks, p).astype(float)
    target = coalition_values(f, X, bg, masks) - bg.base_value  # (n, m)

    # phi = delta/p * 1 + N u with N an orthonormal basis of the sum-zero subspace
    q, _ = np.linalg.qr(np.column_stack([np.ones(p), np.eye(p)[:, : p - 1]]))
    N = q[:, 1:]
    ZN = Z @ N
    G = ZN.T @ (weights[:, None] * ZN) + ridge_eps * np.eye(p - 1)
    resid = target - np.outer(delta / p, Z.sum(axis=1))
    rhs = (resid * weights) @ ZN
    u = np.linalg.solve(G, rhs.T).T
    phi = (delta / p)[:, None] + u @ N.T
    # re-impose the constraint against round-off in u @ N.T
    phi += ((delta - phi.sum(axis=1)) / p)[:, None]
    return ShapMatrix(phi, bg.base_value, "kernel", fx, _names(feature_names))


def _names(names):
    return None if names is None else tuple(names)


# ---------------------------------------------------------------------------
# CSV dump


def write_shap_csv(S: ShapMatrix, path, feature_names=None) -> None:
    """One row per evaluation sample, one column per feature, then ``base_value``."""
    names = list(feature_names or S.feature_names or [f"x{j}" for j in range(S.p)])
    df = pd.DataFrame(S.phi, columns=names)
    df["base_value"] = S.base_value
    df.to_csv(path, index=False, float_format="%.17g")


def read_shap_csv(path, engine: str = "external") -> ShapMatrix:
    df = pd.read_csv(Path(path), float_precision="round_trip")
    if df.columns[-1] != "base_value":
        raise ShapError("SHAP CSV must end with a base_value column")
    base = df["base_value"].to_numpy(dtype=float)
    if not np.allclose(base, base[0], rtol=0, atol=0):
        raise ShapError("base_value column must be constant")
    phi = df.drop(columns=["base_value"]).to_numpy(dtype=float)
    return ShapMatrix(phi, float(base[0]), engine, None, tuple(df.columns[:-1]))
