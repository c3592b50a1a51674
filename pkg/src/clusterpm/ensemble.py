"""Uniform averaging of PM_1..PM_j and the two rules for choosing j."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .clustering import ClusteringCache, RestartPolicy, derive_seed, find_k_empty
from .dataset_io import SymmetricMinMaxScaler, kfold_split
from .prediction_model import PredictionModel, max_trainable_k, train_pm
from .regressors import RegressorSpec

METHODOLOGIES = ("heuristic_half", "nested_cv")


@dataclass(frozen=True)
class EnsembleConfig:
    """``kempty_cap=None`` scans K_empty up to ``2 * k_cap + 1``, the
    largest value that can still change a capped heuristic choice."""

    methodology: str = "nested_cv"
    k_cap: int = 25
    inner_folds: int = 5
    seed: int = 0
    kempty_cap: int | None = None
    kempty_semantics: str = "best"

    def __post_init__(self):
        if self.methodology not in METHODOLOGIES:
            raise ValueError(f"methodology must be one of {METHODOLOGIES}")
        if self.k_cap < 1:
            raise ValueError("k_cap must be >= 1")
        if self.inner_folds < 2:
            raise ValueError("inner_folds must be >= 2")

    @property
    def scan_cap(self) -> int:
        return self.kempty_cap if self.kempty_cap is not None else 2 * self.k_cap + 1


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    chosen_j: int
    predictions: np.ndarray
    per_pm_predictions: np.ndarray


class ScaleFamily:
    """PM_1, PM_2, ... on one training set, built on demand.

    Clusterings are memoized by k, so the K_empty scan, the trainability
    check and PM training all reuse the same best-of runs.
    """

    def __init__(self, X, y, spec: RegressorSpec, policy: RestartPolicy):
        self.X, self.y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
        self.spec = spec
        self.policy = policy
        self.cache = ClusteringCache(self.X, policy)
        self._pms: dict[int, PredictionModel] = {}
        self._fallback = None
        self._trainable: dict[int, int] = {}

    def pm(self, k: int) -> PredictionModel:
        if k not in self._pms:
            if self._fallback is None:
                self._fallback = self.spec.fit(self.X, self.y)
            self._pms[k] = train_pm(self.X, self.y, k, self.spec, self.policy,
                                    cache=self.cache, fallback_model=self._fallback)
        return self._pms[k]

    def pms(self, j: int) -> list[PredictionModel]:
        return [self.pm(k) for k in range(1, j + 1)]

    def max_trainable_k(self, k_cap: int) -> int:
        if k_cap not in self._trainable:
            self._trainable[k_cap] = max_trainable_k(self.X, self.spec, self.policy, k_cap, self.cache)
        return self._trainable[k_cap]

    def k_empty(self, k_cap: int, semantics: str = "best") -> int:
        return find_k_empty(self.X, self.policy, k_cap, self.cache, semantics)

    def predictions(self, X, j: int) -> np.ndarray:
        """(j, n_rows) matrix of PM_1..PM_j predictions."""
        return np.stack([pm.predict(X) for pm in self.pms(j)])


def prefix_means(per_pm: np.ndarray) -> np.ndarray:
    """Row m-1 holds the uniform average of PM_1..PM_m.

    Computed as a running mean so that row 0 is PM_1 itself and a run of
    identical predictions averages to exactly that value.
    """
    per_pm = np.asarray(per_pm, dtype=np.float64)
    out = np.empty_like(per_pm)
    running = np.zeros(per_pm.shape[1:])
    for m, row in enumerate(per_pm, start=1):
        running = running + (row - running) / m
        out[m - 1] = running
    return out


def average_first_j(pms, X, j: int) -> np.ndarray:
    if not 1 <= j <= len(pms):
        raise ValueError(f"j must be in [1, {len(pms)}], got {j}")
    per_pm = np.stack([pm.predict(X) for pm in pms[:j]])
    return prefix_means(per_pm)[-1]


def heuristic_j(k_empty: int, trainable: int) -> int:
    """floor(K_empty / 2), clamped to [1, trainable]."""
    return max(1, min(k_empty // 2, trainable))


def select_j_heuristic(X, y, spec: RegressorSpec, policy: RestartPolicy, k_cap: int,
                       kempty_cap: int | None = None, semantics: str = "best",
                       family: ScaleFamily | None = None) -> int:
    family = family or ScaleFamily(X, y, spec, policy)
    k_empty = family.k_empty(kempty_cap or 2 * k_cap + 1, semantics)
    return heuristic_j(k_empty, family.max_trainable_k(k_cap))


@dataclass(frozen=True, eq=False)
class NestedSelection:
    """Outcome of the inner search.

    ``mae_by_j[j-1]`` is the inner-fold average MAE of averaging PM_1..PM_j,
    for every candidate j.
    """

    chosen_j: int
    mae_by_j: np.ndarray
    jmax_per_fold: tuple = field(default=())


def _mae_rows(per_prefix: np.ndarray, truth: np.ndarray) -> np.ndarray:
    return np.mean(np.abs(per_prefix - truth[None, :]), axis=1)


def nested_cv_selection(X, y, spec: RegressorSpec, policy: RestartPolicy,
                        config: EnsembleConfig, j_limit: int | None = None) -> NestedSelection:
    """Choose j by an inner cross validation on one training set.

    Each inner fold trains PM_1..PM_Jmax with Jmax its own trainable limit;
    only j up to the smallest Jmax (and ``j_limit``) are compared. Ties go
    to the smallest j.
    """
    X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
    cap = config.k_cap if j_limit is None else min(config.k_cap, j_limit)
    if cap <= 1:
        return NestedSelection(1, np.full(1, np.nan))
    if X.shape[0] < config.inner_folds:
        raise ValueError(f"{X.shape[0]} rows are too few for {config.inner_folds} inner folds")

    plan = kfold_split(X.shape[0], config.inner_folds, derive_seed(config.seed, 1))
    curves, jmaxes = [], []
    for f, (tr, te) in enumerate(plan.splits()):
        family = ScaleFamily(X[tr], y[tr], spec, policy.derive(2, f))
        jmax = family.max_trainable_k(cap)
        curves.append(_mae_rows(prefix_means(family.predictions(X[te], jmax)), y[te]))
        jmaxes.append(jmax)
    common = min(jmaxes)
    mae_by_j = np.zeros(common)
    for curve in curves:
        mae_by_j += curve[:common]
    mae_by_j /= len(curves)
    return NestedSelection(int(np.argmin(mae_by_j)) + 1, mae_by_j, tuple(jmaxes))


def select_j_nested_cv(X, y, spec: RegressorSpec, policy: RestartPolicy, config: EnsembleConfig,
                       j_limit: int | None = None) -> int:
    return nested_cv_selection(X, y, spec, policy, config, j_limit).chosen_j


class MultiScaleEnsembleRegressor(RegressorMixin, BaseEstimator):
    """Average of clusterwise models PM_1..PM_j with j chosen from the data.

    Parameters
    ----------
    regressor : {"ols", "stepwise", "random_forest"}
        Base model fitted inside every cluster.
    methodology : {"nested_cv", "heuristic_half"}
        ``"nested_cv"`` picks j by inner cross validation on the training
        data; ``"heuristic_half"`` uses floor(K_empty / 2).
    k_cap : int
        Largest scale considered.
    normalize : bool
        Scale features to [-1, 1] on the training data before clustering.

    Attributes
    ----------
    n_models_ : int
        The chosen j.
    prediction_models_ : list of PredictionModel
    k_empty_ : int or None
        Only set by the heuristic methodology.
    selection_ : NestedSelection or None
    """

    def __init__(self, regressor="ols", methodology="nested_cv", k_cap=25, inner_folds=5,
                 n_restarts=200, max_iter=300, kempty_cap=None, kempty_semantics="best",
                 normalize=True, n_trees=100, min_leaf=5, max_steps=None, random_state=0):
        self.regressor = regressor
        self.methodology = methodology
        self.k_cap = k_cap
        self.inner_folds = inner_folds
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.kempty_cap = kempty_cap
        self.kempty_semantics = kempty_semantics
        self.normalize = normalize
        self.n_trees = n_trees
        self.min_leaf = min_leaf
        self.max_steps = max_steps
        self.random_state = random_state

    def _spec(self) -> RegressorSpec:
        return RegressorSpec(self.regressor, max_steps=self.max_steps, n_trees=self.n_trees,
                             min_leaf=self.min_leaf, seed=self.random_state)

    def _config(self) -> EnsembleConfig:
        return EnsembleConfig(self.methodology, self.k_cap, self.inner_folds, self.random_state,
                              self.kempty_cap, self.kempty_semantics)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True, dtype=np.float64)
        if self.normalize:
            self.scaler_ = SymmetricMinMaxScaler().fit(X)
            X = self.scaler_.transform(X)
        else:
            self.scaler_ = None
        spec, config = self._spec(), self._config()
        policy = RestartPolicy(self.n_restarts, self.max_iter, self.random_state)
        family = ScaleFamily(X, y, spec, policy)
        trainable = family.max_trainable_k(config.k_cap)
        self.k_empty_ = None
        self.selection_ = None
        if config.methodology == "heuristic_half":
            self.k_empty_ = family.k_empty(config.scan_cap, config.kempty_semantics)
            chosen = heuristic_j(self.k_empty_, trainable)
        else:
            self.selection_ = nested_cv_selection(X, y, spec, policy, config, j_limit=trainable)
            chosen = self.selection_.chosen_j
        self.n_models_ = chosen
        self.prediction_models_ = family.pms(chosen)
        self.n_features_in_ = X.shape[1]
        return self

    def _prepare(self, X):
        check_is_fitted(self, "prediction_models_")
        X = check_array(X, dtype=np.float64)
        return self.scaler_.transform(X) if self.scaler_ is not None else X

    def predict_all(self, X) -> EnsembleResult:
        X = self._prepare(X)
        per_pm = np.stack([pm.predict(X) for pm in self.prediction_models_])
        return EnsembleResult(self.n_models_, prefix_means(per_pm)[-1], per_pm)

    def predict(self, X):
        return self.predict_all(X).predictions
