"""Black-box predictors behind one prediction interface.

Built-in kinds are an (optionally ridge-penalized) linear model and a small
gradient-boosted regression-tree ensemble.  ``ExternalPredictor`` replays
predictions computed elsewhere, and ``FunctionPredictor`` wraps any
vectorized callable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

FORMAT_VERSION = 1


class PredictorError(ValueError):
    pass


def _as_matrix(X, p: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size else X.reshape(0, p)
    if X.ndim != 2:
        raise PredictorError(f"expected a 2-d matrix, got shape {X.shape}")
    if X.shape[1] != p:
        if X.shape[0] == 0:
            return X.reshape(0, p)
        raise PredictorError(f"predictor expects {p} features, got {X.shape[1]}")
    return X


class Predictor:
    """Common base: ``predict`` maps an ``(m, p)`` matrix to ``m`` reals."""

    kind = "abstract"
    feature_count: int

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X, self.feature_count)
        if X.shape[0] == 0:
            return np.zeros(0)
        return self._predict(X)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, X) -> np.ndarray:
        return self.predict(X)


def predict_batch(f: Predictor, X) -> np.ndarray:
    return f.predict(X)


# ---------------------------------------------------------------------------
# linear


@dataclass(frozen=True, eq=False)
class LinearPredictor(Predictor):
    intercept: float
    coef: np.ndarray
    ridge: float = 0.0
    kind = "linear"

    @property
    def feature_count(self) -> int:
        return self.coef.shape[0]

    def _predict(self, X):
        # row-wise reduction: a row's prediction does not depend on the batch it is in
        return self.intercept + (X * self.coef).sum(axis=1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "intercept": self.intercept, "coef": self.coef.tolist(), "ridge": self.ridge}


def fit_linear(X, y, ridge: float = 0.0) -> LinearPredictor:
    """Least squares with an unpenalized intercept and an optional ridge term."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise PredictorError("fit_linear needs X (n, p) and y (n,) with n >= 1")
    if ridge < 0:
        raise PredictorError("ridge must be non-negative")
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    p = X.shape[1]
    if ridge == 0.0:
        if p and np.linalg.matrix_rank(Xc) < p:
            raise PredictorError("normal equations are singular; use ridge > 0")
        coef = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    else:
        coef = np.linalg.solve(Xc.T @ Xc + ridge * np.eye(p), Xc.T @ yc)
    return LinearPredictor(float(ym - xm @ coef), coef, float(ridge))


# ---------------------------------------------------------------------------
# gradient-boosted trees


@dataclass(frozen=True)
class GbtConfig:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5
    subsample: float = 1.0
    seed: int = 0


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary tree.  Internal nodes have ``feature >= 0``; leaves carry ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @cached_property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            feat = self.feature[node]
            internal = feat >= 0
            go_left = X[rows, np.where(internal, feat, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def leaf_paths(self):
        """Yield ``(leaf, [(feature, threshold, goes_left), ...])`` for every leaf."""
        stack = [(0, [])]
        while stack:
            i, path = stack.pop()
            if self.feature[i] < 0:
                yield i, path
                continue
            f, t = int(self.feature[i]), float(self.threshold[i])
            stack.append((int(self.right[i]), path + [(f, t, False)]))
            stack.append((int(self.left[i]), path + [(f, t, True)]))

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.intp),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.intp),
            np.asarray(d["right"], dtype=np.intp),
            np.asarray(d["value"], dtype=float),
        )


def _best_split(X, r, min_leaf):
    """Exact greedy variance-reduction split over sorted unique values."""
    n, p = X.shape
    best = (0.0, -1, 0.0)
    total = r.sum()
    base = total * total / n
    for j in range(p):
        order = np.argsort(X[:, j], kind="stable")
        xs, rs = X[order, j], r[order]
        csum = np.cumsum(rs)[:-1]
        nl = np.arange(1, n)
        # only between distinct consecutive values and respecting min_leaf
        ok = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not ok.any():
            continue
        gain = csum**2 / nl + (total - csum) ** 2 / (n - nl) - base
        gain = np.where(ok, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0] + 1e-12 * max(1.0, abs(best[0])):
            best = (float(gain[k]), j, 0.5 * (xs[k] + xs[k + 1]))
    return best


def _grow_tree(X, r, max_depth, min_leaf) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
            lst.append(v)
        return len(feature) - 1

    def grow(idx, depth):
        node = new_node()
        value[node] = float(r[idx].mean())
        if depth >= max_depth or idx.size < 2 * min_leaf:
            return node
        gain, j, t = _best_split(X[idx], r[idx], min_leaf)
        if j < 0 or gain <= 0:
            return node
        mask = X[idx, j] <= t
        feature[node], threshold[node] = j, t
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return Tree(
        np.asarray(feature, dtype=np.intp),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.intp),
        np.asarray(right, dtype=np.intp),
        np.asarray(value, dtype=float),
    )


@dataclass(frozen=True, eq=False)
class GbtPredictor(Predictor):
    trees: tuple[Tree, ...]
    learning_rate: float
    base_score: float
    n_features: int
    config: GbtConfig = field(default_factory=GbtConfig)
    train_loss: tuple[float, ...] = ()
    kind = "gbt"

    @property
    def feature_count(self) -> int:
        return self.n_features

    def _predict(self, X):
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "n_features": self.n_features,
            "config": vars(self.config),
            "train_loss": list(self.train_loss),
            "trees": [t.to_dict() for t in self.trees],
        }


def fit_gbt(X, y, config: GbtConfig | None = None, **overrides) -> GbtPredictor:
    """Least-squares gradient boosting with exact greedy regression trees.

    Each round fits a depth-limited tree to the current residuals and adds it
    with shrinkage ``learning_rate``.  ``subsample < 1`` draws a seeded row
    subset per round.  The per-round training MSE is stored in ``train_loss``
    (entry 0 is the loss of the constant ``base_score``).
    """
    cfg = config or GbtConfig()
    if overrides:
        cfg = GbtConfig(**{**vars(cfg), **overrides})
    if cfg.max_depth < 1 or cfg.n_trees < 1:
        raise PredictorError("max_depth and n_trees must be at least 1")
    if not 0.0 < cfg.learning_rate:
        raise PredictorError("learning_rate must be positive")
    if not 0.0 < cfg.subsample <= 1.0:
        raise PredictorError("subsample must lie in (0, 1]")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if n < 2 * cfg.min_leaf or n != y.shape[0]:
        raise PredictorError(f"need n >= 2*min_leaf = {2 * cfg.min_leaf} rows, got {n}")
    rng = np.random.default_rng(cfg.seed)
    base = float(y.mean())
    pred = np.full(n, base)
    losses = [float(np.mean((y - pred) ** 2))]
    trees = []
    for _ in range(cfg.n_trees):
        resid = y - pred
        if cfg.subsample < 1.0:
            rows = np.sort(rng.choice(n, size=max(2 * cfg.min_leaf, int(cfg.subsample * n)), replace=False))
        else:
            rows = np.arange(n)
        tree = _grow_tree(X[rows], resid[rows], cfg.max_depth, cfg.min_leaf)
        trees.append(tree)
        pred = pred + cfg.learning_rate * tree.predict(X)
        losses.append(float(np.mean((y - pred) ** 2)))
    return GbtPredictor(tuple(trees), cfg.learning_rate, base, X.shape[1], cfg, tuple(losses))


# ---------------------------------------------------------------------------
# external predictions and callables


@dataclass(frozen=True, eq=False)
class ExternalPredictor(Predictor):
    """Replays stored predictions for the rows of one evaluation matrix.

    Rows are looked up by their exact feature values in ``reference``; any
    other input vector is an error.
    """

    values: dict
    reference: np.ndarray | None = None
    source: str = ""
    kind = "external"

    @property
    def feature_count(self) -> int:
        if self.reference is None:
            raise PredictorError("external predictor is not bound to a feature matrix")
        return self.reference.shape[1]

    def predict_rows(self, rows) -> np.ndarray:
        out = []
        for i in np.asarray(rows, dtype=int).ravel():
            if int(i) not in self.values:
                raise PredictorError(f"no stored prediction for row index {int(i)}")
            out.append(self.values[int(i)])
        return np.asarray(out, dtype=float)

    def bind(self, X) -> "ExternalPredictor":
        return ExternalPredictor(self.values, np.array(X, dtype=float), self.source)

    def _predict(self, X):
        index = self._index()
        rows = []
        for x in X:
            key = np.ascontiguousarray(x).tobytes()
            if key not in index:
                raise PredictorError("external predictor queried at a vector that is not a dataset row")
            rows.append(index[key])
        return self.predict_rows(rows)

    def _index(self):
        cache = self.__dict__.get("_row_index")
        if cache is None:
            cache = {}
            for i, x in enumerate(self.reference):
                cache.setdefault(np.ascontiguousarray(x).tobytes(), i)
            object.__setattr__(self, "_row_index", cache)
        return cache

    def to_dict(self) -> dict:
        return {"kind": self.kind, "source": self.source}


def external_predictor(path, X=None) -> ExternalPredictor:
    """Read a ``row_index,prediction`` CSV.  Pass the dataset's ``X`` to
    allow lookups by feature vector (needed by :func:`predict_batch`)."""
    path = Path(path)
    df = pd.read_csv(path, float_precision="round_trip")
    if list(df.columns[:2]) != ["row_index", "prediction"]:
        raise PredictorError("external predictions need header 'row_index,prediction'")
    values = {int(i): float(v) for i, v in zip(df["row_index"], df["prediction"])}
    if not all(np.isfinite(list(values.values()))):
        raise PredictorError("external predictions must be finite")
    pred = ExternalPredictor(values, None, str(path))
    return pred.bind(X) if X is not None else pred


def write_predictions(path, predictions) -> None:
    predictions = np.asarray(predictions, dtype=float)
    df = pd.DataFrame({"row_index": np.arange(predictions.shape[0]), "prediction": predictions})
    df.to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True, eq=False)
class FunctionPredictor(Predictor):
    """Wraps a vectorized callable ``fn(X) -> (m,)``."""

    fn: Callable[[np.ndarray], np.ndarray]
    n_features: int
    name: str = "function"
    kind = "function"

    @property
    def feature_count(self) -> int:
        return self.n_features

    def _predict(self, X):
        out = np.asarray(self.fn(X), dtype=float).ravel()
        if out.shape[0] != X.shape[0]:
            raise PredictorError("callable returned the wrong number of predictions")
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name}


# ---------------------------------------------------------------------------
# persistence


def save_model(f: Predictor, path) -> None:
    """Write a linear or GBT model as versioned JSON."""
    if not isinstance(f, (LinearPredictor, GbtPredictor)):
        raise PredictorError(f"cannot serialize a {f.kind!r} predictor")
    payload = {"format": "phitest-model", "version": FORMAT_VERSION, "model": f.to_dict()}
    Path(path).write_text(json.dumps(payload, indent=1))


def load_model(path) -> Predictor:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "phitest-model":
        raise PredictorError("not a phitest model file")
    if payload.get("version") != FORMAT_VERSION:
        raise PredictorError(f"unsupported model format version {payload.get('version')}")
    m = payload["model"]
    if m["kind"] == "linear":
        return LinearPredictor(float(m["intercept"]), np.asarray(m["coef"], dtype=float), float(m["ridge"]))
    if m["kind"] == "gbt":
        return GbtPredictor(
            tuple(Tree.from_dict(t) for t in m["trees"]),
            float(m["learning_rate"]),
            float(m["base_score"]),
            int(m["n_features"]),
            GbtConfig(**m["config"]),
            tuple(m["train_loss"]),
        )
    raise PredictorError(f"unknown model kind {m['kind']!r}")
