"""Lloyd's k-means with Forgy seeding, best-of-restarts selection and
empty-cluster tracking.

A cluster that loses all of its points during an update keeps its previous
centroid for the rest of that run and the run is flagged. The flag is not
repaired away because the scale at which it first shows up (``K_empty``) is
used downstream to size the ensemble.

For a best-of-restarts result two flags are kept: ``hit_empty`` is set when
any restart emptied a cluster, ``best_hit_empty`` only when the selected run
did. `find_k_empty` scans on the latter by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

DEFAULT_RESTARTS = 200
DEFAULT_MAX_ITERATIONS = 300


@dataclass(frozen=True)
class RestartPolicy:
    n_restarts: int = DEFAULT_RESTARTS
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    seed: int = 0

    def __post_init__(self):
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def derive(self, *salt: int) -> "RestartPolicy":
        """Same policy with a seed derived from ``(seed, *salt)``."""
        return RestartPolicy(self.n_restarts, self.max_iterations, derive_seed(self.seed, *salt))


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint32)[0])


@dataclass(frozen=True, eq=False)
class Clustering:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    distortion: float
    hit_empty: bool
    best_hit_empty: bool = None
    n_iter: int = 0
    restart: int = 0
    # per-iteration distortion of this run (first entry: after initial assignment)
    trace: np.ndarray = field(default=None, repr=False)
    # final distortion of every restart, in restart order (best-of runs only)
    restart_distortions: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.best_hit_empty is None:
            object.__setattr__(self, "best_hit_empty", self.hit_empty)

    @property
    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster)


# -- compiled kernels -----------------------------------------------------------


# Skip tests on distance bounds use this relative margin so that rounding in
# the bounds can never hide a strictly closer centroid.
_BOUND_MARGIN = 1e-9


@njit(cache=True)
def _dist2(X, i, C, c):
    s = 0.0
    for j in range(X.shape[1]):
        t = X[i, j] - C[c, j]
        s += t * t
    return s


@njit(cache=True)
def _scan(X, i, C):
    # nearest (lowest index on ties) and second-nearest squared distances
    best = np.inf
    second = np.inf
    bi = 0
    d = X.shape[1]
    for c in range(C.shape[0]):
        s = 0.0
        for j in range(d):
            t = X[i, j] - C[c, j]
            s += t * t
            if s > second:
                break
        if s > second:
            continue
        if s < best:
            second = best
            best = s
            bi = c
        elif s < second:
            second = s
    return bi, best, second


@njit(cache=True)
def _assign(X, C, labels, mind):
    for i in range(X.shape[0]):
        bi, best, _ = _scan(X, i, C)
        labels[i] = bi
        mind[i] = best


@njit(cache=True)
def _update(X, labels, C, frozen):
    n, d = X.shape
    k = C.shape[0]
    sums = np.zeros((k, d))
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        c = labels[i]
        counts[c] += 1
        for j in range(d):
            sums[c, j] += X[i, j]
    emptied = False
    for c in range(k):
        if frozen[c]:
            continue
        if counts[c] == 0:
            frozen[c] = True
            emptied = True
            continue
        for j in range(d):
            C[c, j] = sums[c, j] / counts[c]
    return emptied


@njit(cache=True)
def _lloyd(X, C0, max_iter, trace):
    # Lloyd iterations with Elkan's bounds: one upper bound per point and one
    # lower bound per (point, centroid). A centroid is skipped only when the
    # bounds prove it strictly farther than the current one, so assignments
    # (lowest index on ties) equal those of the plain algorithm.
    n, d = X.shape
    k = C0.shape[0]
    C = C0.copy()
    old = np.empty_like(C)
    frozen = np.zeros(k, dtype=np.bool_)
    labels = np.empty(n, dtype=np.int64)
    upper = np.empty(n)
    lower = np.empty((n, k))
    move = np.zeros(k)
    half = np.empty((k, k))
    s = np.empty(k)
    total = 0.0
    for i in range(n):
        bi = 0
        best = np.inf
        for c in range(k):
            d2 = _dist2(X, i, C, c)
            lower[i, c] = np.sqrt(d2)
            if d2 < best:
                best = d2
                bi = c
        labels[i] = bi
        upper[i] = np.sqrt(best)
        total += best
    trace[0] = total
    hit_empty = False
    it = 0
    m = 1.0 + _BOUND_MARGIN
    while it < max_iter:
        old[:, :] = C
        if _update(X, labels, C, frozen):
            hit_empty = True
        it += 1
        for c in range(k):
            move[c] = np.sqrt(_dist2(C, c, old, c))
            s[c] = np.inf
            half[c, c] = 0.0
        for c in range(k):
            for c2 in range(c + 1, k):
                h = 0.5 * np.sqrt(_dist2(C, c, C, c2))
                half[c, c2] = h
                half[c2, c] = h
                if h < s[c]:
                    s[c] = h
                if h < s[c2]:
                    s[c2] = h
        changed = False
        total = 0.0
        for i in range(n):
            a = labels[i]
            for c in range(k):
                lower[i, c] -= move[c]
            u = upper[i] + move[a]
            if u * m < s[a]:
                upper[i] = u
                total += _dist2(X, i, C, a)
                continue
            da2 = _dist2(X, i, C, a)
            u = np.sqrt(da2)
            lower[i, a] = u
            for c in range(k):
                if c == a or u * m < lower[i, c] or u * m < half[a, c]:
                    continue
                dc2 = _dist2(X, i, C, c)
                lower[i, c] = np.sqrt(dc2)
                if dc2 < da2 or (dc2 == da2 and c < a):
                    a = c
                    da2 = dc2
                    u = lower[i, c]
            upper[i] = u
            if a != labels[i]:
                changed = True
                labels[i] = a
            total += da2
        trace[it] = total
        if not changed:
            break
    return C, labels, trace[it], hit_empty, it


@njit(cache=True)
def _best_of(X, inits, max_iter):
    n_restarts = inits.shape[0]
    trace = np.empty(max_iter + 1)
    distortions = np.empty(n_restarts)
    best = 0
    any_empty = False
    bC, bl, bd, bh, bit = _lloyd(X, X[inits[0]], max_iter, trace)
    distortions[0] = bd
    any_empty = bh
    for r in range(1, n_restarts):
        C, labels, dist, hit, it = _lloyd(X, X[inits[r]], max_iter, trace)
        distortions[r] = dist
        any_empty = any_empty or hit
        if dist < bd:
            bC, bl, bd, bh, bit, best = C, labels, dist, hit, it, r
    return bC, bl, bd, bh, bit, best, any_empty, distortions


# -- public API -------------------------------------------------------------------


def _check_points(points) -> np.ndarray:
    return np.ascontiguousarray(check_array(points, ensure_min_samples=1), dtype=np.float64)


def _forgy(n_rows: int, k: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    if k <= n_rows:
        return rng.choice(n_rows, size=k, replace=False)
    # more clusters than rows: every row once, the surplus duplicated
    return np.concatenate([rng.permutation(n_rows), rng.choice(n_rows, size=k - n_rows)])


def restart_seed(seed: int, k: int, restart: int) -> int:
    return derive_seed(seed, k, restart)


def lloyd_once(points, k: int, seed: int, max_iterations: int = DEFAULT_MAX_ITERATIONS) -> Clustering:
    """One Lloyd run from Forgy initialization drawn with ``seed``."""
    X = _check_points(points)
    if k < 1:
        raise ValueError("k must be >= 1")
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    init = _forgy(X.shape[0], k, seed)
    trace = np.empty(max_iterations + 1)
    C, labels, dist, hit, it = _lloyd(X, X[init], max_iterations, trace)
    return Clustering(k, C, labels, float(dist), bool(hit), bool(hit), int(it), 0, trace[: it + 1].copy())


def kmeans_best_of(points, k: int, policy: RestartPolicy = RestartPolicy()) -> Clustering:
    """Minimum-distortion run over ``policy.n_restarts`` seeded Lloyd runs.

    ``hit_empty`` is set if any restart emptied a cluster, ``best_hit_empty``
    if the winning run did. Ties in distortion go to the lowest restart index.
    """
    X = _check_points(points)
    if k < 1:
        raise ValueError("k must be >= 1")
    inits = np.stack(
        [_forgy(X.shape[0], k, restart_seed(policy.seed, k, r)) for r in range(policy.n_restarts)]
    )
    C, labels, dist, best_hit, it, best, any_empty, distortions = _best_of(X, inits, policy.max_iterations)
    return Clustering(
        k, C, labels, float(dist), bool(any_empty), bool(best_hit), int(it), int(best),
        restart_distortions=distortions,
    )


def best_run_has_empty(clustering: Clustering) -> bool:
    """Whether the selected run itself ends with an empty cluster."""
    return bool(np.any(clustering.cluster_sizes == 0))


def assign_points(points, centroids) -> np.ndarray:
    X = _check_points(points)
    C = np.ascontiguousarray(np.asarray(centroids, dtype=np.float64))
    if C.ndim != 2 or C.shape[0] == 0:
        raise ValueError("empty centroid list")
    if C.shape[1] != X.shape[1]:
        raise ValueError(f"dimension mismatch: points have {X.shape[1]}, centroids {C.shape[1]}")
    labels = np.zeros(X.shape[0], dtype=np.int64)
    _assign(X, C, labels, np.empty(X.shape[0]))
    return labels


def assign_point(x, centroids) -> int:
    """Index of the nearest centroid by squared Euclidean distance (lowest index on ties)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("x must be a single feature vector")
    return int(assign_points(x[None, :], centroids)[0])


class ClusteringCache:
    """Memoizes `kmeans_best_of` by k for one point set and policy."""

    def __init__(self, points, policy: RestartPolicy):
        self.points = _check_points(points)
        self.policy = policy
        self._store: dict[int, Clustering] = {}

    def __call__(self, k: int) -> Clustering:
        if k not in self._store:
            self._store[k] = kmeans_best_of(self.points, k, self.policy)
        return self._store[k]


EMPTY_SEMANTICS = ("best", "any")


def find_k_empty(points, policy: RestartPolicy, k_cap: int,
                 cache: ClusteringCache | None = None, semantics: str = "best") -> int:
    """Smallest k >= 2 at which clustering hits an empty cluster, else ``k_cap``.

    ``semantics="best"`` looks at the minimum-distortion run only;
    ``"any"`` counts an empty cluster in any restart.
    """
    if k_cap < 2:
        raise ValueError("k_cap must be >= 2")
    if semantics not in EMPTY_SEMANTICS:
        raise ValueError(f"semantics must be one of {EMPTY_SEMANTICS}")
    cache = cache or ClusteringCache(points, policy)
    for k in range(2, k_cap + 1):
        c = cache(k)
        if (c.best_hit_empty if semantics == "best" else c.hit_empty):
            return k
    return k_cap


class RestartKMeans(ClusterMixin, BaseEstimator):
    """Estimator wrapper over `kmeans_best_of`."""

    def __init__(self, n_clusters=8, n_restarts=DEFAULT_RESTARTS,
                 max_iter=DEFAULT_MAX_ITERATIONS, random_state=0):
        self.n_clusters = n_clusters
        self.n_restarts = n_restarts
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _check_points(X)
        policy = RestartPolicy(self.n_restarts, self.max_iter, self.random_state)
        result = kmeans_best_of(X, self.n_clusters, policy)
        self.clustering_ = result
        self.cluster_centers_ = result.centroids
        self.labels_ = result.assignments
        self.inertia_ = result.distortion
        self.hit_empty_ = result.hit_empty
        self.best_hit_empty_ = result.best_hit_empty
        self.n_iter_ = result.n_iter
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return assign_points(X, self.cluster_centers_)
