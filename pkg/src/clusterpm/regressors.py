"""Base regressors used as cluster models: least squares, forward stepwise
least squares and a regression forest, all behind the estimator API."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .clustering import derive_seed

KINDS = ("ols", "stepwise", "random_forest")
_ALIASES = {"forest": "random_forest", "rf": "random_forest", "linear": "ols", "lr": "ols"}
_DEFAULT_MIN_ROWS = {"ols": 2, "stepwise": 2, "random_forest": 10}


def canonical_kind(kind: str) -> str:
    kind = _ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"unknown regressor kind {kind!r}; expected one of {KINDS}")
    return kind


def _validate(X, y):
    return check_X_y(X, y, y_numeric=True, ensure_min_samples=1, dtype=np.float64)


def _validate_predict(model, X):
    check_is_fitted(model, "n_features_in_")
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != model.n_features_in_:
        raise ValueError(
            f"dimension mismatch: model trained on {model.n_features_in_} features, got {X.shape[1]}"
        )
    return X


def _lstsq_centered(X, y):
    """Least squares with an unpenalized intercept.

    Rank-deficient designs get the minimum-norm slope vector (complete
    orthogonal factorization with column pivoting).
    """
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    if X.shape[1] == 0:
        return y_mean, np.zeros(0), 0
    # numpy's rank cutoff; LAPACK's bare eps keeps rounding-level singular values
    cond = np.finfo(float).eps * max(X.shape)
    coef, _, rank, _ = linalg.lstsq(X - x_mean, y - y_mean, cond=cond,
                                    lapack_driver="gelsy", check_finite=False)
    return y_mean - x_mean @ coef, coef, int(rank)


class _LinearPredictMixin:
    def predict(self, X):
        X = _validate_predict(self, X)
        return X @ self.coef_ + self.intercept_


class OLSRegressor(_LinearPredictMixin, RegressorMixin, BaseEstimator):
    """Ordinary least squares with intercept."""

    def fit(self, X, y):
        X, y = _validate(X, y)
        self.intercept_, self.coef_, self.rank_ = _lstsq_centered(X, y)
        self.intercept_ = float(self.intercept_)
        self.n_features_in_ = X.shape[1]
        return self


def aic(rss: float, n: int, n_params: int) -> float:
    with np.errstate(divide="ignore"):
        return float(n * np.log(rss / n) + 2 * n_params)


class StepwiseRegressor(_LinearPredictMixin, RegressorMixin, BaseEstimator):
    """Forward selection by AIC = n ln(RSS/n) + 2p, starting from the intercept.

    Parameters count the intercept. A step is accepted only if it strictly
    lowers AIC, and at least one residual degree of freedom is always kept.

    Attributes
    ----------
    selected_ : list of int
        Feature indices in the order they entered.
    aic_trace_ : list of float
        AIC of the intercept-only model followed by each accepted step.
    """

    def __init__(self, max_steps=None):
        self.max_steps = max_steps

    def fit(self, X, y):
        X, y = _validate(X, y)
        n, d = X.shape
        if n < 2:
            raise ValueError("stepwise regression needs at least 2 rows")
        max_steps = d if self.max_steps is None else min(self.max_steps, d)

        # Candidate columns are kept orthogonal to the current basis so the
        # RSS after adding column j is rss - (z_j . r)^2 / (z_j . z_j).
        Z = X - X.mean(axis=0)
        r = y - y.mean()
        col_scale = np.einsum("ij,ij->j", Z, Z)
        rss = float(r @ r)
        selected: list[int] = []
        trace = [aic(rss, n, 1)]
        available = np.ones(d, dtype=bool)
        while len(selected) < max_steps and len(selected) + 2 < n:
            zz = np.einsum("ij,ij->j", Z, Z)
            usable = available & (zz > 1e-10 * np.maximum(col_scale, 1e-300))
            if not usable.any():
                break
            zr = Z.T @ r
            gain = np.where(usable, zr**2 / np.where(usable, zz, 1.0), -np.inf)
            j = int(np.argmax(gain))
            new_rss = max(rss - gain[j], 0.0)
            new_aic = aic(new_rss, n, len(selected) + 2)
            if not new_aic < trace[-1]:
                break
            q = Z[:, j] / np.sqrt(zz[j])
            r = r - (q @ r) * q
            Z = Z - np.outer(q, q @ Z)
            selected.append(j)
            available[j] = False
            rss = new_rss
            trace.append(new_aic)

        self.selected_ = selected
        self.aic_trace_ = trace
        intercept, sub_coef, _ = _lstsq_centered(X[:, selected], y)
        self.coef_ = np.zeros(d)
        self.coef_[selected] = sub_coef
        self.intercept_ = float(intercept)
        self.n_features_in_ = d
        return self


# -- regression forest -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Flat binary tree; ``feature[i] < 0`` marks leaf ``i``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            idx = rows[active]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]


def _best_split(X, y, features, min_leaf):
    n = y.shape[0]
    yc = y - y.mean()
    sizes = np.arange(1, n)
    size_ok = (sizes >= min_leaf) & (n - sizes >= min_leaf)
    best_sse, best_feature, best_threshold = np.inf, -1, 0.0
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = yc[order]
        valid = size_ok & (xs[:-1] < xs[1:])
        if not valid.any():
            continue
        s = np.cumsum(ys)
        q = np.cumsum(ys * ys)
        sl, ql = s[:-1], q[:-1]
        sr, qr = s[-1] - sl, q[-1] - ql
        sse = (ql - sl * sl / sizes) + (qr - sr * sr / (n - sizes))
        sse = np.where(valid, sse, np.inf)
        i = int(np.argmin(sse))
        if sse[i] < best_sse:
            threshold = 0.5 * (xs[i] + xs[i + 1])
            if not xs[i] <= threshold < xs[i + 1]:
                threshold = xs[i]
            best_sse, best_feature, best_threshold = sse[i], int(f), float(threshold)
    return best_feature, best_threshold


def grow_tree(X, y, mtry: int, min_leaf: int, rng: np.random.Generator) -> RegressionTree:
    """CART regression tree minimizing the summed squared error of the children."""
    d = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[rows].mean()))
        return len(feature) - 1

    stack = [(new_node(np.arange(X.shape[0])), np.arange(X.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if rows.shape[0] < 2 * min_leaf or np.ptp(y[rows]) == 0:
            continue
        candidates = rng.choice(d, size=mtry, replace=False)
        f, t = _best_split(X[rows], y[rows], candidates, min_leaf)
        if f < 0:
            continue
        mask = X[rows, f] <= t
        left_rows, right_rows = rows[mask], rows[~mask]
        feature[node], threshold[node] = f, t
        left[node] = new_node(left_rows)
        right[node] = new_node(right_rows)
        stack.append((right[node], right_rows))
        stack.append((left[node], left_rows))

    return RegressionTree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value),
    )


class ForestRegressor(RegressorMixin, BaseEstimator):
    """Bagged CART regression trees with per-node feature subsampling.

    ``mtry=None`` uses max(1, n_features // 3). Each tree draws its own
    bootstrap sample and feature subsets from a seed derived from
    ``(random_state, tree index)``, so the fit does not depend on the order
    trees are grown in.
    """

    def __init__(self, n_trees=100, mtry=None, min_leaf=5, bootstrap=True, random_state=0):
        self.n_trees = n_trees
        self.mtry = mtry
        self.min_leaf = min_leaf
        self.bootstrap = bootstrap
        self.random_state = random_state

    def fit(self, X, y):
        X, y = _validate(X, y)
        n, d = X.shape
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ValueError("n_trees and min_leaf must be >= 1")
        mtry = max(1, d // 3) if self.mtry is None else self.mtry
        if not 1 <= mtry <= d:
            raise ValueError(f"mtry must be in [1, {d}]")
        trees = []
        for t in range(self.n_trees):
            rng = np.random.Generator(np.random.PCG64(derive_seed(self.random_state, t)))
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            trees.append(grow_tree(X[rows], y[rows], mtry, self.min_leaf, rng))
        self.trees_ = trees
        self.mtry_ = mtry
        self.n_features_in_ = d
        return self

    def predict(self, X):
        X = _validate_predict(self, X)
        out = np.zeros(X.shape[0])
        for tree in self.trees_:
            out += tree.predict(X)
        return out / len(self.trees_)


# -- spec + functional interface -------------------------------------------------


@dataclass(frozen=True)
class RegressorSpec:
    """Which base regressor to fit and with what settings.

    ``min_train_rows=None`` picks the per-kind default (2 for linear kinds,
    10 for forests).
    """

    kind: str = "ols"
    max_steps: int | None = None
    n_trees: int = 100
    mtry: int | None = None
    min_leaf: int = 5
    seed: int = 0
    min_train_rows: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ValueError("n_trees and min_leaf must be >= 1")
        if self.min_train_rows is not None and self.min_train_rows < 1:
            raise ValueError("min_train_rows must be >= 1")

    @property
    def required_rows(self) -> int:
        if self.min_train_rows is not None:
            return self.min_train_rows
        return _DEFAULT_MIN_ROWS[self.kind]

    def make(self, *salt: int):
        """Unfitted estimator; forests get a seed derived from ``salt``."""
        if self.kind == "ols":
            return OLSRegressor()
        if self.kind == "stepwise":
            return StepwiseRegressor(max_steps=self.max_steps)
        seed = derive_seed(self.seed, *salt) if salt else self.seed
        return ForestRegressor(self.n_trees, self.mtry, self.min_leaf, random_state=seed)

    def fit(self, X, y, *salt: int):
        return self.make(*salt).fit(X, y)


def fit_ols(X, y) -> OLSRegressor:
    return OLSRegressor().fit(X, y)


def fit_stepwise(X, y, max_steps=None) -> StepwiseRegressor:
    return StepwiseRegressor(max_steps=max_steps).fit(X, y)


def fit_random_forest(X, y, n_trees=100, mtry=None, min_leaf=5, seed=0,
                      min_train_rows=10, bootstrap=True) -> ForestRegressor:
    X, y = _validate(X, y)
    if X.shape[0] < min_train_rows:
        raise ValueError(f"random forest needs at least {min_train_rows} rows, got {X.shape[0]}")
    return ForestRegressor(n_trees, mtry, min_leaf, bootstrap, seed).fit(X, y)


def predict(model, x):
    """Predict one feature vector (returns a float) or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(model.predict(x[None, :])[0])
    return model.predict(x)
