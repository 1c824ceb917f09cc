"""Tabular regression datasets: CSV loading, splits, standardization, synthetic data."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

RECIPES = ("none", "airquality", "concrete")

AIRQUALITY_TARGET = "CO(GT)"
AIRQUALITY_SENTINEL = -200.0
_DATETIME_COLUMNS = {"date", "time", "datetime", "timestamp"}


class DataError(ValueError):
    """Raised when a dataset cannot be loaded or violates its invariants."""


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    name: str
    feature_names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = _frozen(self.X)
        y = _frozen(self.y).ravel()
        if X.ndim != 2:
            raise DataError(f"X must be 2-d, got shape {X.shape}")
        n, p = X.shape
        if p < 1:
            raise DataError("dataset has no feature columns (p >= 1 required)")
        if n < 2:
            raise DataError(f"dataset needs at least 2 rows, got {n}")
        if y.shape[0] != n:
            raise DataError(f"y has length {y.shape[0]} but X has {n} rows")
        names = tuple(str(s) for s in self.feature_names)
        if len(names) != p:
            raise DataError(f"{len(names)} feature names for {p} columns")
        if len(set(names)) != p:
            raise DataError("feature names must be unique")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains NaN or infinite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.name, self.feature_names, self.X[idx], self.y[idx])

    def to_csv(self, path, target_name: str = "target") -> None:
        """Write features and target to ``path`` with full float precision."""
        df = pd.DataFrame(self.X, columns=list(self.feature_names))
        df[target_name] = self.y
        df.to_csv(path, index=False, float_format="%.17g")


def _shorten(name: str) -> str:
    short = name.split("(")[0].strip()
    return short or name.strip()


def load_csv(path, target_column: str | None = None, recipe: str = "none") -> Dataset:
    """Load a comma-separated file with a header row into a :class:`Dataset`.

    ``recipe`` selects dataset-specific preprocessing:

    * ``"none"``: every numeric non-target column is a feature.
    * ``"airquality"``: drop date/time columns and every row holding the
      sentinel ``-200``; the target defaults to ``CO(GT)``.
    * ``"concrete"``: the compressive-strength column is the target, the
      remaining eight columns are features with shortened names.
    """
    if recipe is None:
        recipe = "none"
    if recipe not in RECIPES:
        raise DataError(f"unknown recipe {recipe!r}; expected one of {RECIPES}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    df = pd.read_csv(path, sep=",", decimal=".", float_precision="round_trip")
    df.columns = [str(c).strip() for c in df.columns]

    if recipe == "airquality":
        target_column = target_column or AIRQUALITY_TARGET
        empty = [c for c in df.columns if c.startswith("Unnamed") and df[c].isna().all()]
        drop = [c for c in df.columns if c.lower() in _DATETIME_COLUMNS] + empty
        df = df.drop(columns=drop)
        numeric = df.apply(pd.to_numeric, errors="coerce")
        sentinel_rows = (numeric == AIRQUALITY_SENTINEL).any(axis=1)
        df = df.loc[~sentinel_rows]
    elif recipe == "concrete" and target_column is None:
        hits = [c for c in df.columns if "strength" in c.lower()]
        if len(hits) != 1:
            raise DataError(f"cannot identify the compressive-strength column among {list(df.columns)}")
        target_column = hits[0]

    if target_column is None:
        raise DataError("target column must be given for recipe 'none'")
    if target_column not in df.columns:
        raise DataError(f"target column {target_column!r} not found")

    features = df.drop(columns=[target_column])
    if recipe == "none":
        numeric_cols = [c for c in features.columns if pd.api.types.is_numeric_dtype(features[c])]
        skipped = [c for c in features.columns if c not in numeric_cols]
        if skipped:
            logger.warning("skipping non-numeric columns %s", skipped)
        features = features[numeric_cols]
    else:
        bad = [c for c in features.columns if not pd.api.types.is_numeric_dtype(features[c])]
        if bad:
            raise DataError(f"non-numeric columns remain after recipe {recipe!r}: {bad}")
    if recipe == "concrete":
        if features.shape[1] != 8:
            logger.warning("concrete recipe expects 8 features, found %d", features.shape[1])
        names = [_shorten(c) for c in features.columns]
        if len(set(names)) == len(names):
            features.columns = names

    if features.shape[1] == 0:
        raise DataError("no feature columns left (p >= 1 required)")
    if len(df) == 0:
        raise DataError("dataset is empty after filtering")
    y = pd.to_numeric(df[target_column], errors="coerce").to_numpy(dtype=float)
    X = features.to_numpy(dtype=float)
    if not np.all(np.isfinite(y)):
        raise DataError(f"target column {target_column!r} has missing or non-numeric values")
    if not np.all(np.isfinite(X)):
        bad = [c for c in features.columns if not np.all(np.isfinite(features[c].to_numpy(dtype=float)))]
        raise DataError(f"columns with missing values: {bad}")
    return Dataset(path.stem, tuple(features.columns), X, y)


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    train_fraction: float
    train_idx: np.ndarray
    test_idx: np.ndarray
    selection_idx: np.ndarray = field(default_factory=lambda: _frozen([], int))
    inference_idx: np.ndarray = field(default_factory=lambda: _frozen([], int))

    @property
    def split_sample(self) -> bool:
        return len(self.selection_idx) > 0


def make_split(n: int, seed: int, train_fraction: float = 0.8, split_sample: bool = True) -> SplitPlan:
    """Seeded train/test split; optionally halve the training rows into
    a selection part and an inference part."""
    if not 0.0 < train_fraction <= 1.0:
        raise DataError(f"train_fraction must lie in (0, 1], got {train_fraction}")
    if split_sample and n < 4:
        raise DataError("split-sample mode needs n >= 4")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(np.floor(train_fraction * n + 0.5))
    train = perm[:n_train]
    test = np.sort(perm[n_train:])
    sel = inf = np.array([], dtype=int)
    if split_sample:
        half = (n_train + 1) // 2
        sel, inf = np.sort(train[:half]), np.sort(train[half:])
    return SplitPlan(
        seed=int(seed),
        train_fraction=float(train_fraction),
        train_idx=_frozen(np.sort(train), int),
        test_idx=_frozen(test, int),
        selection_idx=_frozen(sel, int),
        inference_idx=_frozen(inf, int),
    )


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    scales: np.ndarray
    constant: np.ndarray  # True where the column had zero spread

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.means) / self.scales

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.scales + self.means


def fit_standardizer(X) -> Standardizer:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("standardizer needs a 2-d matrix with at least 2 rows")
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    constant = scales <= 1e-12 * np.maximum(1.0, np.abs(means))
    if constant.any():
        logger.warning("constant columns %s get scale 1", np.flatnonzero(constant).tolist())
    scales = np.where(constant, 1.0, scales)
    return Standardizer(_frozen(means), _frozen(scales), _frozen(constant, bool))


def synth_gaussian(n: int, p: int, beta, sigma: float, seed: int, intercept: float = 0.0) -> Dataset:
    """``X`` i.i.d. standard normal, ``y = intercept + X @ beta + N(0, sigma^2)``."""
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != p:
        raise DataError(f"beta has length {beta.shape[0]}, expected {p}")
    if sigma < 0:
        raise DataError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = intercept + X @ beta + sigma * rng.standard_normal(n)
    names = tuple(f"x{j}" for j in range(p))
    return Dataset(f"synth_gaussian_n{n}_p{p}", names, X, y)


def sub_seed(seed: int, *keys: int) -> int:
    """Derive a child seed from ``seed`` and an integer counter path.

    ``np.random.SeedSequence([seed, *keys])`` is hashed to a 32-bit integer,
    so ``sub_seed(s, 3)`` is the seed of replicate 3 of run ``s``.
    """
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])

