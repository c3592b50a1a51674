"""Outer cross validation, MAE, paired t-tests and error profiles."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .clustering import RestartPolicy, derive_seed, find_k_empty
from .dataset_io import Dataset, apply_normalization, fit_normalization, kfold_split
from .ensemble import EnsembleConfig, ScaleFamily, heuristic_j, nested_cv_selection, prefix_means
from .regressors import RegressorSpec

REPORT_COLUMNS = ("dataset", "regressor", "k_empty", "mae_pm1", "mae_heuristic",
                  "p_heuristic", "mae_cvk", "p_cvk")
NORMALIZATION_MODES = ("train", "whole")


def mae(predictions, truth) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predictions.shape != truth.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {truth.shape}")
    if predictions.size == 0:
        raise ValueError("mae of empty vectors")
    return float(np.mean(np.abs(predictions - truth)))


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    pvalue: float
    df: int
    identical: bool = False

    def render(self) -> str:
        if self.identical:
            return "--"
        if self.pvalue < 0.001:
            return "<< 0.001"
        return f"{self.pvalue:.4f}"


def paired_ttest(errors_a, errors_b) -> TTestResult:
    """Two-tailed paired t-test on ``errors_a - errors_b``.

    All-zero differences give p = 1 flagged ``identical``; zero spread with a
    nonzero mean gives p = 0.
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired t-test needs two vectors of equal length")
    n = a.shape[0]
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = a - b
    if not np.any(d):
        return TTestResult(0.0, 1.0, n - 1, identical=True)
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        return TTestResult(math.copysign(math.inf, mean), 0.0, n - 1)
    t = mean * math.sqrt(n) / sd
    return TTestResult(float(t), float(2.0 * stats.t.sf(abs(t), n - 1)), n - 1)


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    dataset: str
    regressor: str
    k_empty: int
    k_empty_per_fold: tuple
    mae_pm1: float
    mae_heuristic: float
    p_heuristic: TTestResult
    mae_cvk: float
    p_cvk: TTestResult
    chosen_j_heuristic: tuple
    chosen_j_cvk: tuple
    trainable_per_fold: tuple = ()
    # pooled per-instance absolute errors, ordered by (outer fold, row)
    errors_pm1: np.ndarray = field(default=None, repr=False)
    errors_heuristic: np.ndarray = field(default=None, repr=False)
    errors_cvk: np.ndarray = field(default=None, repr=False)

    def row(self) -> dict:
        return {
            "dataset": self.dataset,
            "regressor": self.regressor,
            "k_empty": str(self.k_empty),
            "mae_pm1": f"{self.mae_pm1:.6f}",
            "mae_heuristic": f"{self.mae_heuristic:.6f}",
            "p_heuristic": _p_field(self.p_heuristic),
            "mae_cvk": f"{self.mae_cvk:.6f}",
            "p_cvk": _p_field(self.p_cvk),
        }


def _p_field(result: TTestResult) -> str:
    return "--" if result.identical else f"{result.pvalue:.6g}"


@dataclass(frozen=True, eq=False)
class ErrorProfile:
    dataset: str
    regressor: str
    mae_by_j: np.ndarray
    highlighted_j: int

    @property
    def n_models(self) -> int:
        return self.mae_by_j.shape[0]

    @property
    def best_j(self) -> int:
        return int(np.argmin(self.mae_by_j)) + 1


# -- outer folds ------------------------------------------------------------------


@dataclass
class _FoldOutcome:
    test: np.ndarray
    pm1: np.ndarray
    heuristic: np.ndarray | None = None
    cvk: np.ndarray | None = None
    k_empty: int | None = None
    j_heuristic: int | None = None
    j_cvk: int | None = None
    trainable: int | None = None
    per_pm: np.ndarray | None = None


def _normalized_split(X, train, test, params):
    params = params if params is not None else fit_normalization(X[train])
    return apply_normalization(params, X[train]), apply_normalization(params, X[test])


def _run_fold(X, y, train, test, spec, policy, config, whole_params, select, profile_cap):
    Xtr, Xte = _normalized_split(X, train, test, whole_params)
    family = ScaleFamily(Xtr, y[train], spec, policy)
    trainable = family.max_trainable_k(config.k_cap)
    out = _FoldOutcome(test=test, pm1=family.pm(1).predict(Xte), trainable=trainable)
    if select:
        out.k_empty = family.k_empty(config.scan_cap, config.kempty_semantics)
        out.j_heuristic = heuristic_j(out.k_empty, trainable)
        selection = nested_cv_selection(Xtr, y[train], spec, policy, config, j_limit=trainable)
        out.j_cvk = selection.chosen_j
        top = max(out.j_heuristic, out.j_cvk)
        averaged = prefix_means(family.predictions(Xte, top))
        out.heuristic = averaged[out.j_heuristic - 1]
        out.cvk = averaged[out.j_cvk - 1]
    if profile_cap:
        out.per_pm = family.predictions(Xte, min(trainable, profile_cap))
    return out


def _outer_folds(dataset, spec, config, outer_folds, seed, policy, normalization, n_jobs,
                 select=True, profile_cap=None):
    if normalization not in NORMALIZATION_MODES:
        raise ValueError(f"normalization must be one of {NORMALIZATION_MODES}")
    X, y = dataset.features, dataset.target
    whole = fit_normalization(X) if normalization == "whole" else None
    plan = kfold_split(dataset.n_rows, outer_folds, derive_seed(seed, 0))
    jobs = (
        delayed(_run_fold)(X, y, train, test, spec, policy.derive(1, f),
                           replace(config, seed=derive_seed(seed, 1, f)), whole, select, profile_cap)
        for f, (train, test) in enumerate(plan.splits())
    )
    return Parallel(n_jobs=n_jobs)(jobs)


def full_data_k_empty(dataset: Dataset, config: EnsembleConfig, policy: RestartPolicy) -> int:
    X = apply_normalization(fit_normalization(dataset.features), dataset.features)
    return find_k_empty(X, policy, config.scan_cap, semantics=config.kempty_semantics)


def _default_policy(seed: int, policy: RestartPolicy | None) -> RestartPolicy:
    return policy if policy is not None else RestartPolicy(seed=seed)


def run_experiment(dataset: Dataset, spec: RegressorSpec, config: EnsembleConfig = EnsembleConfig(),
                   outer_folds: int = 5, seed: int = 0, policy: RestartPolicy | None = None,
                   normalization: str = "train", n_jobs: int = 1) -> ExperimentReport:
    """One table row: PM_1 against both ensemble rules under outer cross validation.

    Every fold normalizes on its training part (``normalization="whole"``
    normalizes the full dataset once instead), picks j by both rules and
    predicts its test part. Absolute errors are pooled over all folds and
    compared per instance.
    """
    policy = _default_policy(seed, policy)
    folds = _outer_folds(dataset, spec, config, outer_folds, seed, policy, normalization, n_jobs)
    truth = np.concatenate([dataset.target[f.test] for f in folds])
    e_pm1 = np.abs(np.concatenate([f.pm1 for f in folds]) - truth)
    e_heur = np.abs(np.concatenate([f.heuristic for f in folds]) - truth)
    e_cvk = np.abs(np.concatenate([f.cvk for f in folds]) - truth)
    return ExperimentReport(
        dataset=dataset.id,
        regressor=spec.kind,
        k_empty=full_data_k_empty(dataset, config, policy),
        k_empty_per_fold=tuple(f.k_empty for f in folds),
        mae_pm1=float(np.mean(e_pm1)),
        mae_heuristic=float(np.mean(e_heur)),
        p_heuristic=paired_ttest(e_heur, e_pm1),
        mae_cvk=float(np.mean(e_cvk)),
        p_cvk=paired_ttest(e_cvk, e_pm1),
        chosen_j_heuristic=tuple(f.j_heuristic for f in folds),
        chosen_j_cvk=tuple(f.j_cvk for f in folds),
        trainable_per_fold=tuple(f.trainable for f in folds),
        errors_pm1=e_pm1,
        errors_heuristic=e_heur,
        errors_cvk=e_cvk,
    )


def build_error_profile(dataset: Dataset, spec: RegressorSpec, config: EnsembleConfig = EnsembleConfig(),
                        outer_folds: int = 5, seed: int = 0, policy: RestartPolicy | None = None,
                        normalization: str = "train", n_jobs: int = 1) -> ErrorProfile:
    """Pooled outer-CV MAE of averaging PM_1..PM_j for j = 1..J.

    J is the smallest trainable scale over the outer folds, capped at
    ``config.k_cap``; the highlighted bar is floor(K_empty / 2) from a scan
    of the full dataset.
    """
    policy = _default_policy(seed, policy)
    folds = _outer_folds(dataset, spec, config, outer_folds, seed, policy, normalization, n_jobs,
                         select=False, profile_cap=config.k_cap)
    J = min(f.per_pm.shape[0] for f in folds)
    truth = np.concatenate([dataset.target[f.test] for f in folds])
    pooled = np.concatenate([prefix_means(f.per_pm[:J]) for f in folds], axis=1)
    mae_by_j = np.mean(np.abs(pooled - truth[None, :]), axis=1)
    k_empty = full_data_k_empty(dataset, config, policy)
    return ErrorProfile(dataset.id, spec.kind, mae_by_j, heuristic_j(k_empty, J))


# -- artifacts ----------------------------------------------------------------------


def write_report_csv(reports, path, errors: dict | None = None) -> None:
    """Write report rows; failed tasks appear with an ``error`` column."""
    errors = errors or {}
    columns = list(REPORT_COLUMNS) + (["error"] if errors else [])
    rows = []
    for item in reports:
        if isinstance(item, ExperimentReport):
            row = item.row()
        else:
            dataset, regressor = item
            row = {c: "" for c in REPORT_COLUMNS}
            row.update(dataset=dataset, regressor=regressor)
        if errors:
            row["error"] = errors.get((row["dataset"], row["regressor"]), "")
        rows.append(row)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_report_csv(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _render_p(text: str) -> str:
    if text in ("", "--"):
        return text
    p = float(text)
    return "<< 0.001" if p < 0.001 else f"{p:.4f}"


def _render_mae(text: str) -> str:
    return f"{float(text):.4f}" if text else ""


def render_table(rows: list[dict]) -> str:
    """Fixed-width text table, one row per dataset and regressor."""
    header = ["Dataset", "Regressor", "K_empty", "MAE (PM_1)", "MAE (kmeans-I)", "p-value",
              "MAE-CVk", "p-value"]
    body = [
        [r["dataset"], r["regressor"], r["k_empty"], _render_mae(r["mae_pm1"]),
         _render_mae(r["mae_heuristic"]), _render_p(r["p_heuristic"]),
         _render_mae(r["mae_cvk"]), _render_p(r["p_cvk"])]
        + ([f"error: {r['error']}"] if r.get("error") else [])
        for r in rows
    ]
    widths = [max(len(str(x[i])) for x in [header] + body if i < len(x)) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        cells = [c.ljust(w) for c, w in zip(r, widths)] + r[len(widths):]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def write_profile_csv(profile: ErrorProfile, path) -> None:
    lines = ["j,mae,highlighted"]
    for j, value in enumerate(profile.mae_by_j, start=1):
        lines.append(f"{j},{value:.6f},{int(j == profile.highlighted_j)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def profile_svg(profile: ErrorProfile, width: int = 640, height: int = 320) -> str:
    """Bar chart of the profile; the heuristic's bar is drawn in red."""
    left, right, top, bottom = 56, 16, 28, 40
    plot_w = width - left - right
    plot_h = height - top - bottom
    ymax = float(profile.mae_by_j.max()) or 1.0
    slot = plot_w / profile.n_models
    bar_w = slot * 0.8
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle">'
        f'{_xml(profile.dataset)} / {_xml(profile.regressor)}</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="#000"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="#000"/>',
        f'<text x="{left - 6}" y="{top + 4}" text-anchor="end">{ymax:.4g}</text>',
        f'<text x="{left - 6}" y="{top + plot_h + 4}" text-anchor="end">0</text>',
        f'<text x="{left + plot_w / 2:.1f}" y="{height - 8}" text-anchor="middle">'
        f'number of prediction models averaged</text>',
    ]
    for j, value in enumerate(profile.mae_by_j, start=1):
        h = plot_h * float(value) / ymax
        x = left + (j - 1) * slot + (slot - bar_w) / 2
        highlighted = j == profile.highlighted_j
        css = "bar highlighted" if highlighted else "bar"
        fill = "#d62728" if highlighted else "#7f7f7f"
        parts.append(
            f'<rect class="{css}" data-j="{j}" data-mae="{value:.6f}" x="{x:.2f}" '
            f'y="{top + plot_h - h:.2f}" width="{bar_w:.2f}" height="{h:.2f}" fill="{fill}"/>'
        )
        parts.append(
            f'<text x="{x + bar_w / 2:.2f}" y="{top + plot_h + 14}" text-anchor="middle">{j}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _xml(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
