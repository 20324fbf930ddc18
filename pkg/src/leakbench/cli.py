"""Command-line front end: gen, split, audit, run, report."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from leakbench import __version__
from leakbench.dataset import (
    SynthConfig,
    generate_synthetic,
    read_features,
    read_manifest,
    write_atomic,
    write_features,
    write_manifest,
)
from leakbench.errors import ConfigError, DataError, LeakBenchError
from leakbench.pipeline import ProtocolConfig, degraded_split_experiment, derive_seed, run_matrix
from leakbench.report import load_report, render_svg, write_report
from leakbench import metrics
from leakbench.splits import (
    SplitPlan,
    audit_plan,
    finetune_groups_of,
    make_kfold_plans,
    split_clean_frame_sample,
    split_holdout_by_group,
    split_holdout_by_item,
    split_leaky_frame_pool,
)

log = logging.getLogger("leakbench")

MANIFEST_NAME = "manifest.csv"
FEATURES_NAME = "features.lbfs"
RUN_MANIFEST_NAME = "run_manifest.json"
SPLITTERS = {
    "holdout_by_group": split_holdout_by_group,
    "holdout_by_item": split_holdout_by_item,
    "leaky_frame_pool": split_leaky_frame_pool,
    "clean_frame_sample": split_clean_frame_sample,
}


def _configure_logging():
    level = os.environ.get("LEAKBENCH_LOG", "error").lower()
    if level not in ("error", "info", "debug"):
        level = "error"
    logging.basicConfig(level=getattr(logging, level.upper()), format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        raise ConfigError("--config is required")
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw, p.parent


def _resolve(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _load_data(path: Path):
    """A data directory from ``gen`` (or a manifest CSV next to its features)."""
    if path.is_dir():
        manifest, features = path / MANIFEST_NAME, path / FEATURES_NAME
    else:
        manifest, features = path, path.parent / FEATURES_NAME
    dataset = read_manifest(manifest)
    feats = read_features(features) if features.exists() else None
    return dataset, feats


def _dataset_from_config(cfg: dict, base: Path):
    if "data" in cfg:
        dataset, feats = _load_data(_resolve(base, cfg["data"]))
        if feats is None:
            raise DataError("data directory has no feature file")
        return dataset, feats
    if "synth" in cfg:
        return generate_synthetic(SynthConfig.from_dict(cfg["synth"]))
    raise ConfigError("config needs either 'data' or 'synth'")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_run_manifest(out: Path, config_path, seeds: dict, files: list[Path]):
    manifest = {
        "config": str(config_path),
        "out": str(out),
        "seeds": seeds,
        "version": __version__,
        "files": {f.name: _sha256(f) for f in sorted(files)},
    }
    write_atomic(out / RUN_MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _seed(args, cfg: dict, key: str = "seed") -> int:
    value = args.seed if args.seed is not None else cfg.get(key, 0)
    try:
        value = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be an integer") from None
    if not 0 <= value < 2**64:
        raise ConfigError(f"{key} must fit in an unsigned 64-bit integer")
    return value


def cmd_gen(args) -> int:
    cfg, _ = _load_config(args.config)
    synth = dict(cfg.get("synth", cfg))
    if args.seed is not None:
        synth["seed"] = args.seed
    config = SynthConfig.from_dict(synth)
    out = Path(args.out or cfg.get("out", "data"))
    dataset, feats = generate_synthetic(config)
    write_manifest(dataset, out / MANIFEST_NAME)
    write_features(feats, out / FEATURES_NAME)
    _write_run_manifest(out, args.config, {"seed": config.seed}, [out / MANIFEST_NAME, out / FEATURES_NAME])
    print(json.dumps({"items": len(dataset.item_ids), "groups": len(dataset.group_ids), "out": str(out)}))
    return 0


def cmd_split(args) -> int:
    cfg, base = _load_config(args.config)
    dataset, _ = _load_data(_resolve(base, cfg.get("data", "data")))
    seed = _seed(args, cfg)
    protocol = cfg.get("protocol")
    out = Path(args.out or cfg.get("out", "splits"))
    params = {k: cfg[k] for k in ("test_fraction", "frame_fraction") if k in cfg}
    if "train_val_ratio" in cfg:
        params["trainval_ratio" if protocol in ("holdout_by_group", "holdout_by_item") else "train_val_ratio"] = tuple(
            cfg["train_val_ratio"]
        )
    if protocol == "kfold":
        plans = make_kfold_plans(
            dataset, int(cfg.get("k", 5)), int(cfg.get("replicates", 1)), bool(cfg.get("grouped", True)), seed
        )
    elif protocol in SPLITTERS:
        if protocol in ("holdout_by_group", "holdout_by_item"):
            params.pop("frame_fraction", None)
        try:
            plans = [SPLITTERS[protocol](dataset, seed=seed, **params)]
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
    else:
        raise ConfigError(f"unknown split protocol {protocol!r}; use kfold or one of {sorted(SPLITTERS)}")
    files = []
    for k, plan in enumerate(plans):
        path = out / ("plan.json" if len(plans) == 1 else f"plan_{k:03d}.json")
        write_atomic(path, plan.dumps())
        files.append(path)
    _write_run_manifest(out, args.config, {"seed": seed}, files)
    print(json.dumps({"plans": [str(f) for f in files]}))
    return 0


def _read_plan(path) -> SplitPlan:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"plan file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"plan {path} is not valid JSON: {exc}") from None
    return SplitPlan.from_json(raw)


def cmd_audit(args) -> int:
    if not args.plan or not args.data:
        raise ConfigError("audit needs --plan and --data")
    plan = _read_plan(args.plan)
    dataset, _ = _load_data(Path(args.data))
    ft_groups = None
    if args.finetune_plan:
        ft_groups = finetune_groups_of(_read_plan(args.finetune_plan), dataset)
    report = audit_plan(plan, dataset, ft_groups)
    print(json.dumps(report.to_json(), sort_keys=True))
    return 0


def _run_degraded(cfg, dataset, feats, base_seed, replicates) -> list[dict]:
    reports = []
    for grouped in cfg.get("grouped", [False, True]):
        runs = [
            degraded_split_experiment(
                dataset,
                feats,
                bool(grouped),
                seed=derive_seed(base_seed, "degraded", bool(grouped), r),
                split_seed=derive_seed(base_seed, "split", r),
                finetune=bool(cfg.get("finetune", False)),
                max_train_items=cfg.get("max_train_items"),
                replicate=r,
            )
            for r in range(replicates)
        ]
        reports.append(
            {
                "protocol": {"tag": runs[0].tag, "label": runs[0].tag, "grouped": bool(grouped)},
                "seeds": {
                    "base_seed": base_seed,
                    "replicates": [{"replicate": r.replicate, "seed": r.seed, "split_seed": r.split_seed} for r in runs],
                },
                "per_replicate": [r.to_json() for r in runs],
                "summary": metrics.aggregate(r.metrics for r in runs),
            }
        )
    return reports


def cmd_run(args) -> int:
    cfg, base = _load_config(args.config)
    base_seed = _seed(args, cfg, "base_seed")
    replicates = int(cfg.get("replicates", 5))
    if replicates < 1:
        raise ConfigError("replicates must be positive")
    dataset, feats = _dataset_from_config(cfg, base)
    experiment = cfg.get("experiment", "matrix")
    if experiment == "matrix":
        raw_protocols = cfg.get("protocols")
        if not raw_protocols:
            raise ConfigError("run config needs a non-empty 'protocols' list")
        protocols = [ProtocolConfig.from_json(p) for p in raw_protocols]
        result = run_matrix(dataset, feats, protocols, replicates, base_seed, jobs=args.jobs)
        reports = result.to_reports()
    elif experiment == "degraded-split":
        reports = _run_degraded(cfg, dataset, feats, base_seed, replicates)
    else:
        raise ConfigError(f"unknown experiment {experiment!r}")
    out = Path(args.out or cfg.get("out", "results"))
    path = write_report(reports, out)
    _write_run_manifest(out, args.config, {"base_seed": base_seed, "replicates": replicates}, [path])
    for r in reports:
        s = r["summary"]
        log.info("%s plcc=%s srocc=%s", r["protocol"]["tag"], s["plcc_mean"], s["srocc_mean"])
    print(json.dumps({"report": str(path), "cells": len(reports)}))
    return 0


def cmd_report(args) -> int:
    if not args.input:
        raise ConfigError("report needs --in")
    reports = load_report(args.input)
    if args.svg:
        write_atomic(args.svg, render_svg(reports))
    for r in reports:
        s = r["summary"]
        print(
            f'{r["protocol"].get("label", r["protocol"]["tag"])}\t'
            f'plcc {_fmt(s["plcc_mean"])} +- {_fmt(s["plcc_std"])}\t'
            f'srocc {_fmt(s["srocc_mean"])} +- {_fmt(s["srocc_std"])}'
        )
    return 0


def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leakbench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"leakbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        return p

    common(sub.add_parser("gen", help="generate a synthetic dataset")).set_defaults(func=cmd_gen)
    common(sub.add_parser("split", help="write split plans")).set_defaults(func=cmd_split)
    p = common(sub.add_parser("audit", help="audit a split plan"))
    p.add_argument("--plan", help="split plan JSON")
    p.add_argument("--data", help="data directory or manifest CSV")
    p.add_argument("--finetune-plan", help="plan of the fine-tuning stage, for taint checks")
    p.set_defaults(func=cmd_audit)
    common(sub.add_parser("run", help="run a protocol matrix")).set_defaults(func=cmd_run)
    p = common(sub.add_parser("report", help="summarize results and draw the bar chart"))
    p.add_argument("--in", dest="input", help="results directory or report JSON")
    p.add_argument("--svg", help="write the bar chart here")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        print("error: ConfigError: --jobs must be positive", file=sys.stderr)
        return ConfigError.exit_code
    try:
        return args.func(args)
    except LeakBenchError as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: DataError: {_one_line(exc)}", file=sys.stderr)
        return DataError.exit_code
    except Exception as exc:
        log.debug("unexpected failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return LeakBenchError.exit_code


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
