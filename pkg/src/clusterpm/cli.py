"""Command-line entry point: ``clusterpm {scan-kempty,run,profile,report}``.

Settings come from an optional JSON config file; flags override it. Keys::

    {"registry": "data/registry.json", "datasets": ["housing"],
     "regressors": ["ols"], "seed": 0, "outer_folds": 5, "inner_folds": 5,
     "k_cap": 25, "normalization": "train", "out": "results",
     "n_restarts": 200, "n_jobs": 1, "kempty_semantics": "best"}

A relative ``registry`` path in a config file resolves against the config
file's directory. ``seed`` has no default.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import dataclass, field, fields
from pathlib import Path

from joblib import Parallel, delayed

from .clustering import RestartPolicy, find_k_empty
from .dataset_io import DatasetError, apply_normalization, fit_normalization, load_registry
from .ensemble import EnsembleConfig
from .evaluation import (NORMALIZATION_MODES, build_error_profile, profile_svg, read_report_csv,
                         render_table, run_experiment, write_profile_csv, write_report_csv)
from .regressors import RegressorSpec, canonical_kind

CLI_REGRESSORS = ("ols", "stepwise", "forest")


@dataclass
class RunConfig:
    seed: int
    registry: str = "data/registry.json"
    datasets: list = field(default_factory=list)
    regressors: list = field(default_factory=lambda: ["ols"])
    outer_folds: int = 5
    inner_folds: int = 5
    k_cap: int = 25
    normalization: str = "train"
    out: str = "results"
    n_restarts: int = 200
    n_jobs: int = 1
    kempty_semantics: str = "best"

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if not self.datasets:
            raise ValueError("select at least one dataset")
        if not self.regressors:
            raise ValueError("select at least one regressor")
        for r in self.regressors:
            canonical_kind(r)
        if self.normalization not in NORMALIZATION_MODES:
            raise ValueError(f"normalization must be one of {NORMALIZATION_MODES}")

    def ensemble_config(self) -> EnsembleConfig:
        return EnsembleConfig(k_cap=self.k_cap, inner_folds=self.inner_folds, seed=self.seed,
                              kempty_semantics=self.kempty_semantics)

    def policy(self) -> RestartPolicy:
        return RestartPolicy(n_restarts=self.n_restarts, seed=self.seed)


_FLAG_KEYS = ("registry", "datasets", "regressors", "seed", "k_cap", "normalization", "out",
              "n_restarts", "n_jobs", "outer_folds", "inner_folds", "kempty_semantics")


def build_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config:
        config_path = Path(args.config)
        values = json.loads(config_path.read_text(encoding="utf-8"))
        known = {f.name for f in fields(RunConfig)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "registry" in values and not Path(values["registry"]).is_absolute():
            values["registry"] = str(config_path.parent / values["registry"])
    for key in _FLAG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if "seed" not in values:
        raise ValueError("a seed is required (--seed or 'seed' in the config file)")
    config = RunConfig(**values)
    if not config.datasets and getattr(args, "all_datasets", False):
        config.datasets = list(load_registry(config.registry))
    config.validate()
    return config


# -- tasks ------------------------------------------------------------------------


def _load(config: RunConfig, dataset_id: str):
    registry = load_registry(config.registry)
    if dataset_id not in registry:
        raise DatasetError(f"dataset {dataset_id!r} is not in {config.registry}")
    return registry[dataset_id].load()


def _spec(config: RunConfig, regressor: str) -> RegressorSpec:
    return RegressorSpec(regressor, seed=config.seed)


def _short_error(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


def _task_kempty(config: RunConfig, dataset_id: str):
    try:
        ds = _load(config, dataset_id)
        X = apply_normalization(fit_normalization(ds.features), ds.features)
        ec = config.ensemble_config()
        return find_k_empty(X, config.policy(), ec.scan_cap, semantics=ec.kempty_semantics), None
    except Exception as exc:  # reported per task
        return None, _short_error(exc)


def _task_run(config: RunConfig, dataset_id: str, regressor: str):
    try:
        ds = _load(config, dataset_id)
        report = run_experiment(ds, _spec(config, regressor), config.ensemble_config(),
                                outer_folds=config.outer_folds, seed=config.seed,
                                policy=config.policy(), normalization=config.normalization)
        return report, None
    except Exception as exc:
        return None, _short_error(exc)


def _task_profile(config: RunConfig, dataset_id: str, regressor: str):
    try:
        ds = _load(config, dataset_id)
        profile = build_error_profile(ds, _spec(config, regressor), config.ensemble_config(),
                                      outer_folds=config.outer_folds, seed=config.seed,
                                      policy=config.policy(), normalization=config.normalization)
        out = Path(config.out)
        stem = f"profile_{dataset_id}_{canonical_kind(regressor)}"
        write_profile_csv(profile, out / f"{stem}.csv")
        (out / f"{stem}.svg").write_text(profile_svg(profile), encoding="utf-8")
        return profile, None
    except Exception as exc:
        return None, _short_error(exc)


def _pool(config: RunConfig, fn, tasks):
    return Parallel(n_jobs=config.n_jobs)(delayed(fn)(config, *t) for t in tasks)


def _pairs(config: RunConfig):
    return [(d, r) for d in config.datasets for r in config.regressors]


def cmd_scan_kempty(config: RunConfig) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    results = _pool(config, _task_kempty, [(d,) for d in config.datasets])
    failed = sum(1 for _, e in results if e)
    lines = ["dataset,k_empty" + (",error" if failed else "")]
    for d, (value, err) in zip(config.datasets, results):
        if err:
            lines.append(f"{d},,{_csv_quote(err)}")
            print(f"{d}: error: {err}", file=sys.stderr)
        else:
            lines.append(f"{d},{value}" + ("," if failed else ""))
            print(f"{d}: K_empty = {value}")
    (out / "kempty.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 1 if failed else 0


def _csv_quote(text: str) -> str:
    return '"' + text.replace('"', '""') + '"' if any(c in text for c in ',"\n') else text


def cmd_run(config: RunConfig) -> int:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = _pairs(config)
    results = _pool(config, _task_run, pairs)
    items, errors = [], {}
    for (d, r), (report, err) in zip(pairs, results):
        if err:
            errors[(d, canonical_kind(r))] = err
            items.append((d, canonical_kind(r)))
            print(f"{d}/{r}: error: {err}", file=sys.stderr)
        else:
            items.append(report)
    write_report_csv(items, out / "report.csv", errors)
    table = render_table(read_report_csv(out / "report.csv"))
    (out / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return 1 if errors else 0


def cmd_profile(config: RunConfig) -> int:
    Path(config.out).mkdir(parents=True, exist_ok=True)
    pairs = _pairs(config)
    failed = 0
    for (d, r), (profile, err) in zip(pairs, _pool(config, _task_profile, pairs)):
        if err:
            failed += 1
            print(f"{d}/{r}: error: {err}", file=sys.stderr)
        else:
            print(f"{d}/{r}: J = {profile.n_models}, highlighted j = {profile.highlighted_j}, "
                  f"best j = {profile.best_j}")
    return 1 if failed else 0


def cmd_report(args: argparse.Namespace) -> int:
    table = render_table(read_report_csv(args.input))
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


# -- argument parsing ---------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--registry", help="dataset registry (JSON)")
    p.add_argument("--dataset", dest="datasets", nargs="+", metavar="ID")
    p.add_argument("--all-datasets", action="store_true", help="every registry entry")
    p.add_argument("--regressor", dest="regressors", nargs="+", choices=CLI_REGRESSORS)
    p.add_argument("--seed", type=int)
    p.add_argument("--k-cap", dest="k_cap", type=int)
    p.add_argument("--normalization", choices=NORMALIZATION_MODES)
    p.add_argument("--out", help="output directory")
    p.add_argument("--n-restarts", dest="n_restarts", type=int)
    p.add_argument("--n-jobs", dest="n_jobs", type=int)
    p.add_argument("--outer-folds", dest="outer_folds", type=int)
    p.add_argument("--inner-folds", dest="inner_folds", type=int)
    p.add_argument("--kempty-semantics", dest="kempty_semantics", choices=("best", "any"))


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clusterpm", description="Multi-scale clusterwise regression experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("scan-kempty", "smallest k with an empty cluster, per dataset"),
                       ("run", "MAE / t-test report for dataset x regressor"),
                       ("profile", "error profile CSV + SVG per dataset x regressor")):
        _add_run_flags(sub.add_parser(name, help=text))
    rep = sub.add_parser("report", help="render a report CSV as a table")
    rep.add_argument("input", help="report.csv written by `run`")
    rep.add_argument("--out", help="also write the table here")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if args.command == "report":
        return cmd_report(args)
    try:
        config = build_config(args)
    except (ValueError, OSError) as exc:
        parser.error(str(exc))
    handler = {"scan-kempty": cmd_scan_kempty, "run": cmd_run, "profile": cmd_profile}[args.command]
    try:
        return handler(config)
    except Exception:  # pragma: no cover
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
