"""Clusterwise prediction models: cluster at scale k, fit one regressor per
cluster, route each query to the model of its nearest centroid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .clustering import ClusteringCache, RestartPolicy, assign_points
from .regressors import RegressorSpec


@dataclass(frozen=True, eq=False)
class PredictionModel:
    """PM_k. ``cluster_models[c] is None`` marks a cluster served by the fallback."""

    k: int
    centroids: np.ndarray | None
    cluster_models: tuple
    fallback_model: object
    spec: RegressorSpec

    @property
    def n_features(self) -> int:
        return self.fallback_model.n_features_in_

    @property
    def fallback_clusters(self) -> list[int]:
        return [c for c, m in enumerate(self.cluster_models) if m is None]

    def route(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        if self.k == 1:
            return np.zeros(X.shape[0], dtype=np.int64)
        return assign_points(X, self.centroids)

    def predict(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features:
            raise ValueError(f"dimension mismatch: expected {self.n_features} features, got {X.shape[1]}")
        if self.k == 1:
            return self.fallback_model.predict(X)
        labels = self.route(X)
        out = np.empty(X.shape[0])
        for c in np.unique(labels):
            rows = labels == c
            model = self.cluster_models[c] or self.fallback_model
            out[rows] = model.predict(X[rows])
        return out

    def describe(self) -> str:
        lines = [f"PM_{self.k} ({self.spec.kind}), {len(self.fallback_clusters)} cluster(s) on fallback"]
        for c, model in enumerate(self.cluster_models):
            lines.append(f"  cluster {c}: {_describe_model(model)}")
        lines.append(f"  fallback: {_describe_model(self.fallback_model)}")
        return "\n".join(lines)


def _describe_model(model) -> str:
    if model is None:
        return "fallback"
    if hasattr(model, "trees_"):
        return f"forest of {len(model.trees_)} trees, {sum(t.n_leaves for t in model.trees_)} leaves"
    coefs = " ".join(f"{c:+.4g}" for c in model.coef_)
    return f"intercept {model.intercept_:+.4g}; coef [{coefs}]"


def train_pm(X, y, k: int, spec: RegressorSpec, policy: RestartPolicy,
             cache: ClusteringCache | None = None, fallback_model=None) -> PredictionModel:
    """Train PM_k on normalized features ``X`` and targets ``y``.

    ``fallback_model`` may pass in an already fitted full-data model (it must
    be ``spec.fit(X, y)``) so a family of PMs on one fold shares it.
    """
    X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if X.shape[0] < spec.required_rows:
        raise ValueError(
            f"{spec.kind} needs at least {spec.required_rows} training rows, got {X.shape[0]}"
        )
    if fallback_model is None:
        fallback_model = spec.fit(X, y)
    if k == 1:
        return PredictionModel(1, None, (fallback_model,), fallback_model, spec)

    cache = cache or ClusteringCache(X, policy)
    clustering = cache(k)
    models = []
    for c in range(k):
        rows = clustering.assignments == c
        if rows.sum() >= spec.required_rows:
            models.append(spec.fit(X[rows], y[rows], k, c))
        else:
            models.append(None)
    return PredictionModel(k, clustering.centroids, tuple(models), fallback_model, spec)


def predict_pm(pm: PredictionModel, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return float(pm.predict(x[None, :])[0])
    return pm.predict(x)


def max_trainable_k(X, spec: RegressorSpec, policy: RestartPolicy, k_cap: int,
                    cache: ClusteringCache | None = None) -> int:
    """Largest k <= k_cap whose best clustering run has no empty cluster and
    leaves at least one cluster big enough to fit ``spec``; at least 1."""
    if k_cap < 1:
        raise ValueError("k_cap must be >= 1")
    X = check_array(X, dtype=np.float64)
    k_cap = min(k_cap, X.shape[0])
    cache = cache or ClusteringCache(X, policy)
    for k in range(k_cap, 1, -1):
        clustering = cache(k)
        if clustering.best_hit_empty:
            continue
        if clustering.cluster_sizes.max() >= spec.required_rows:
            return k
    return 1


class ClusterwiseRegressor(RegressorMixin, BaseEstimator):
    """Single-scale PM_k as an estimator. Expects already normalized features."""

    def __init__(self, n_clusters=2, regressor="ols", n_restarts=200, max_iter=300,
                 random_state=0, n_trees=100, min_leaf=5):
        self.n_clusters = n_clusters
        self.regressor = regressor
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.random_state = random_state
        self.n_trees = n_trees
        self.min_leaf = min_leaf

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
        spec = RegressorSpec(self.regressor, n_trees=self.n_trees, min_leaf=self.min_leaf,
                             seed=self.random_state)
        policy = RestartPolicy(self.n_restarts, self.max_iter, self.random_state)
        self.pm_ = train_pm(X, y, self.n_clusters, spec, policy)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "pm_")
        return self.pm_.predict(X)
