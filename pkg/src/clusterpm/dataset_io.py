"""Loading, normalizing and folding numeric regression datasets."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

ColumnRef = Union[str, int]


class DatasetError(ValueError):
    """Raised when a dataset file or registry entry cannot be used."""


@dataclass(frozen=True, eq=False)
class Dataset:
    id: str
    features: np.ndarray
    target: np.ndarray
    feature_names: tuple[str, ...]
    target_name: str

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        target = np.asarray(self.target, dtype=float)
        if features.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        if target.ndim != 1:
            raise DatasetError("target must be a vector")
        if features.shape[0] < 1:
            raise DatasetError(f"{self.id}: zero usable rows")
        if features.shape[0] != target.shape[0]:
            raise DatasetError(
                f"{self.id}: {features.shape[0]} feature rows but {target.shape[0]} targets"
            )
        if len(self.feature_names) != features.shape[1]:
            raise DatasetError(f"{self.id}: feature_names does not match feature count")
        if not (np.all(np.isfinite(features)) and np.all(np.isfinite(target))):
            raise DatasetError(f"{self.id}: missing or non-finite values")
        features.setflags(write=False)
        target.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.id, self.features[rows], self.target[rows], self.feature_names, self.target_name
        )


def _resolve_column(ref: ColumnRef, header: Sequence[str]) -> int:
    if isinstance(ref, (int, np.integer)) and not isinstance(ref, bool):
        idx = int(ref)
        if idx < 0:
            idx += len(header)
        if not 0 <= idx < len(header):
            raise DatasetError(f"unknown column index {ref}")
        return idx
    try:
        return list(header).index(str(ref))
    except ValueError:
        raise DatasetError(f"unknown column {ref!r}") from None


def _parse_cell(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"non-numeric cell {text!r} at row {row}, column {column!r}") from None
    if not math.isfinite(value):
        raise DatasetError(f"non-numeric cell {text!r} at row {row}, column {column!r}")
    return value


def load_csv(
    path,
    target_column: ColumnRef,
    feature_selection: Sequence[ColumnRef] | None = None,
    *,
    drop_columns: Sequence[ColumnRef] = (),
    dataset_id: str | None = None,
) -> Dataset:
    """Read a headed, comma-separated file of numbers into a `Dataset`.

    Without ``feature_selection`` every column other than the target and
    ``drop_columns`` becomes a feature. Only the selected columns and the
    target are parsed, so unused text columns are tolerated.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file, header row expected") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    target_idx = _resolve_column(target_column, header)
    if feature_selection is None:
        dropped = {_resolve_column(c, header) for c in drop_columns}
        feature_idx = [i for i in range(len(header)) if i != target_idx and i not in dropped]
    else:
        feature_idx = [_resolve_column(c, header) for c in feature_selection]
        if target_idx in feature_idx:
            raise DatasetError("target column cannot also be a feature")
    if not rows:
        raise DatasetError(f"{path}: zero usable rows")

    wanted = feature_idx + [target_idx]
    values = np.empty((len(rows), len(wanted)))
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DatasetError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        for j, c in enumerate(wanted):
            values[r - 2, j] = _parse_cell(row[c].strip(), r, header[c])

    return Dataset(
        id=dataset_id or path.stem,
        features=values[:, :-1],
        target=values[:, -1],
        feature_names=tuple(header[i] for i in feature_idx),
        target_name=header[target_idx],
    )


def last_n_columns(path, n: int, exclude: Sequence[ColumnRef] = ()) -> list[str]:
    """Names of the last ``n`` columns of a CSV header, skipping ``exclude``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = [h.strip() for h in next(csv.reader(fh))]
    skip = {_resolve_column(c, header) for c in exclude}
    kept = [h for i, h in enumerate(header) if i not in skip]
    if n < 1 or n > len(kept):
        raise DatasetError(f"cannot select last {n} of {len(kept)} columns")
    return kept[-n:]


# -- registry -----------------------------------------------------------------


@dataclass(frozen=True)
class RegistryEntry:
    id: str
    path: Path
    target: ColumnRef
    features: tuple | None = None
    last_features: int | None = None
    drop: tuple = ()
    notes: str = ""

    def load(self) -> Dataset:
        selection = self.features
        if self.last_features is not None:
            selection = last_n_columns(self.path, self.last_features, exclude=(self.target, *self.drop))
        return load_csv(
            self.path, self.target, selection, drop_columns=self.drop, dataset_id=self.id
        )


def load_registry(path) -> dict[str, RegistryEntry]:
    """Parse a JSON dataset registry. Relative paths resolve against its directory.

    Schema::

        {"datasets": {"<id>": {"path": "...", "target": "<column>",
                               "features": [...], "last_features": 4,
                               "drop": [...], "notes": "..."}}}
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"missing registry: {path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from None
    entries = {}
    for key, spec in raw.get("datasets", {}).items():
        unknown = set(spec) - {"path", "target", "features", "last_features", "drop", "notes"}
        if unknown:
            raise DatasetError(f"registry entry {key!r}: unknown keys {sorted(unknown)}")
        if "path" not in spec or "target" not in spec:
            raise DatasetError(f"registry entry {key!r} needs 'path' and 'target'")
        if spec.get("features") is not None and spec.get("last_features") is not None:
            raise DatasetError(f"registry entry {key!r}: use 'features' or 'last_features', not both")
        file_path = Path(spec["path"])
        if not file_path.is_absolute():
            file_path = path.parent / file_path
        features = spec.get("features")
        entries[key] = RegistryEntry(
            id=key,
            path=file_path,
            target=spec["target"],
            features=tuple(features) if features is not None else None,
            last_features=spec.get("last_features"),
            drop=tuple(spec.get("drop", ())),
            notes=spec.get("notes", ""),
        )
    return entries


# -- normalization --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormalizationParams:
    min: np.ndarray
    max: np.ndarray

    @property
    def n_features(self) -> int:
        return self.min.shape[0]


def fit_normalization(X) -> NormalizationParams:
    X = check_array(X, ensure_min_samples=1)
    return NormalizationParams(X.min(axis=0), X.max(axis=0))


def apply_normalization(params: NormalizationParams, X) -> np.ndarray:
    """Map features onto [-1, 1] using fitted ranges; constant features map to 0.

    Values outside the fitted range are not clipped.
    """
    X = check_array(X, ensure_min_samples=1)
    if X.shape[1] != params.n_features:
        raise ValueError(
            f"dimension mismatch: X has {X.shape[1]} features, params expect {params.n_features}"
        )
    span = params.max - params.min
    constant = span == 0
    scaled = -1.0 + 2.0 * (X - params.min) / np.where(constant, 1.0, span)
    scaled[:, constant] = 0.0
    return scaled


class SymmetricMinMaxScaler(TransformerMixin, BaseEstimator):
    """Scale each feature to [-1, 1] over the rows seen in ``fit``."""

    def fit(self, X, y=None):
        params = fit_normalization(X)
        self.data_min_ = params.min
        self.data_max_ = params.max
        self.n_features_in_ = params.n_features
        return self

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        return apply_normalization(self.params_, X)

    @property
    def params_(self) -> NormalizationParams:
        return NormalizationParams(self.data_min_, self.data_max_)


# -- folds ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldPlan:
    n_folds: int
    assignments: np.ndarray = field(repr=False)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def splits(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for f in range(self.n_folds):
            yield self.train_indices(f), self.test_indices(f)

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.n_folds)


def kfold_split(n_rows: int, n_folds: int, seed: int) -> FoldPlan:
    """Shuffle rows with ``seed`` and deal them round-robin into folds."""
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    if n_rows < n_folds:
        raise ValueError(f"cannot split {n_rows} rows into {n_folds} folds")
    order = np.random.default_rng(seed).permutation(n_rows)
    assignments = np.empty(n_rows, dtype=np.int64)
    assignments[order] = np.arange(n_rows) % n_folds
    assignments.setflags(write=False)
    return FoldPlan(n_folds, assignments)
