"""Single entry point: train / evaluate / interpret / synth / gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every run writes its artifacts under one run directory (given with --out, or
created under $HIERCONN_OUT_ROOT, default ./runs) together with the
effective configuration that produced them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import RunConfig, parse_config
from .data import (
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
    stratified_holdout,
    stratified_kfold,
)
from .errors import DataError, HierconnError, NumericalError, ParseError
from .evaluate import format_metric_table, run_cv
from .gradcheck import run_gradcheck
from .interpret import (
    aggregate_assignments,
    atlas_overlap,
    export_report,
    rank_subgraphs,
    select_cohort,
)
from .model import init_params
from .train import fit

OUT_ROOT_ENV = "HIERCONN_OUT_ROOT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; the contract wants 1
        raise _UsageError(message)


def _add_data_flags(p):
    p.add_argument("--data", help="dataset manifest (JSON)")
    p.add_argument("--synth", help="synthetic-dataset spec file (JSON)")


def _add_run_flags(p):
    p.add_argument("--config", help="run config file (JSON)")
    p.add_argument("--out", help="run directory (default: under $%s)" % OUT_ROOT_ENV)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker cap; 1 guarantees determinism")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-min", type=float, dest="lr_min")
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--patience", type=int, help="early-stop patience; 0 disables")
    p.add_argument("--early-stop-metric", choices=("auc", "acc"), dest="early_stop_metric")
    p.add_argument("--adam-beta1", type=float, dest="adam_beta1")
    p.add_argument("--adam-beta2", type=float, dest="adam_beta2")
    p.add_argument("--adam-eps", type=float, dest="adam_eps")
    p.add_argument("--grad-clip-norm", type=float, dest="grad_clip_norm")
    p.add_argument("--no-mixup", action="store_true")
    p.add_argument("--mixup-alpha", type=float, dest="mixup_alpha")
    p.add_argument("--d", type=int, help="token width")
    p.add_argument("--heads", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--k", type=int, help="subgraph token count")
    p.add_argument("--dropout", type=float)
    p.add_argument("--ffn-mult", type=int, dest="ffn_mult")
    p.add_argument("--class-count", type=int, dest="class_count")
    p.add_argument("--alpha", type=float, help="orthogonality weight")
    p.add_argument("--tau", type=float, help="distillation temperature")
    p.add_argument("--beta-max", type=float, dest="beta_max")
    p.add_argument("--beta-center-fraction", type=float, dest="beta_center_fraction")
    p.add_argument("--beta-slope", type=float, dest="beta_slope")
    p.add_argument("--val-fraction", type=float, dest="val_fraction")
    p.add_argument("--folds", type=int)


def build_parser() -> _Parser:
    parser = _Parser(prog="hierconn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model with a validation holdout")
    _add_data_flags(p)
    _add_run_flags(p)

    p = sub.add_parser("evaluate", help="full stratified cross-validation")
    _add_data_flags(p)
    _add_run_flags(p)

    p = sub.add_parser("interpret", help="sub-network assignments from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--include-controls", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic planted-subgraph dataset")
    p.add_argument("--spec", required=True, help="SyntheticSpec JSON file")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.add_argument("--format", choices=("bin", "csv"), default="bin")

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-3)
    return parser


def _overrides_from_args(args) -> dict:
    mapping = {
        "seed": "seed", "threads": "threads", "out": "out",
        "data": "data", "synth": "synth",
        "val_fraction": "val_fraction", "folds": "folds",
        "epochs": "train.epochs", "batch_size": "train.batch_size",
        "lr": "train.lr", "lr_min": "train.lr_min",
        "weight_decay": "train.weight_decay", "patience": "train.early_stop_patience",
        "early_stop_metric": "train.early_stop_metric",
        "adam_beta1": "train.adam_beta1", "adam_beta2": "train.adam_beta2",
        "adam_eps": "train.adam_eps", "grad_clip_norm": "train.grad_clip_norm",
        "mixup_alpha": "train.mixup_alpha",
        "d": "model.d", "heads": "model.heads", "layers": "model.layers",
        "k": "model.k", "dropout": "model.dropout",
        "ffn_mult": "model.ffn_mult", "class_count": "model.class_count",
        "alpha": "loss.alpha", "tau": "loss.tau", "beta_max": "loss.beta_max",
        "beta_center_fraction": "loss.beta_center_fraction",
        "beta_slope": "loss.beta_slope",
    }
    overrides = {}
    for attr, dotted in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[dotted] = value
    if getattr(args, "no_mixup", False):
        overrides["train.mixup_enabled"] = False
    return overrides


def _resolve_run_dir(explicit: str | None, command: str) -> Path:
    if explicit:
        run_dir = Path(explicit)
    else:
        root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
        run_dir = root / f"{command}-{stamp}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _load_synth_spec(path: str, seed_override: int | None = None) -> SyntheticSpec:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"synthetic spec not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if seed_override is not None:
        doc["seed"] = seed_override
    try:
        return SyntheticSpec(
            n=doc["n"],
            subject_count=doc["subject_count"],
            planted_subgraphs=tuple(tuple(s) for s in doc["planted_subgraphs"]),
            signal_strength=doc["signal_strength"],
            noise_level=doc["noise_level"],
            seed=doc["seed"],
            atlas_blocks=doc.get("atlas_blocks", 4),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: missing or malformed field: {exc}") from exc


def _load_configured_dataset(cfg: RunConfig):
    if cfg.data and cfg.synth:
        raise _UsageError("--data and --synth are mutually exclusive")
    if cfg.data:
        return load_dataset(cfg.data)
    if cfg.synth:
        return generate_synthetic(_load_synth_spec(cfg.synth))
    raise _UsageError("one of --data or --synth is required")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _cmd_train(args) -> int:
    cfg = parse_config(args.config, _overrides_from_args(args))
    ds = _load_configured_dataset(cfg)
    run_dir = _resolve_run_dir(cfg.out, "train")
    _write_json(run_dir / "effective_config.json", cfg.to_dict())
    train_ids, val_ids = stratified_holdout(ds, cfg.val_fraction, cfg.seed)
    model_config = cfg.model_config(ds.n)
    params = init_params(model_config, cfg.seed)
    report = fit(
        ds.subset(train_ids),
        ds.subset(val_ids),
        params,
        model_config,
        cfg.train_config(),
        cfg.loss_weights(),
        out_dir=run_dir,
    )
    _write_json(run_dir / "train_report.json", report.to_dict())
    print(f"best epoch {report.best_epoch}: val {cfg.train['early_stop_metric']} "
          f"{report.best_val_metric:.4f} ({report.epochs_run} epochs run)")
    print(f"artifacts in {run_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = parse_config(args.config, _overrides_from_args(args))
    ds = _load_configured_dataset(cfg)
    run_dir = _resolve_run_dir(cfg.out, "evaluate")
    _write_json(run_dir / "effective_config.json", cfg.to_dict())
    folds = stratified_kfold(ds, k=cfg.folds, val_fraction=cfg.val_fraction, seed=cfg.seed)
    model_config = cfg.model_config(ds.n)
    train_cfg = cfg.train_config()

    def factory(fold_index: int):
        return model_config, init_params(model_config, cfg.seed + fold_index)

    report = run_cv(
        ds, folds, factory, train_cfg, cfg.loss_weights(),
        out_dir=run_dir, threads=cfg.threads,
    )
    _write_json(run_dir / "cv_report.json", _jsonable(report.to_dict()))
    table = format_metric_table(report)
    (run_dir / "metrics_table.txt").write_text(table)
    with open(run_dir / "predictions.csv", "w") as f:
        f.write("subject_id,fold,label,score\n")
        for p in report.predictions:
            f.write(f"{p['subject_id']},{p['fold']},{p['label']},{p['score']!r}\n")
    print(table, end="")
    print(f"artifacts in {run_dir}")
    return 0


def _cmd_interpret(args) -> int:
    model_config, params, _meta = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    run_dir = _resolve_run_dir(args.out, "interpret")
    cohort = select_cohort(ds, include_controls=args.include_controls)
    assign = aggregate_assignments(params, model_config, cohort)
    importance = rank_subgraphs(params, model_config, cohort)
    overlap = atlas_overlap(assign, ds.atlas_labels) if ds.atlas_labels else None
    export_report(assign, overlap, importance, run_dir, atlas_labels=ds.atlas_labels)
    summary = {
        "cohort_size": len(cohort),
        "include_controls": bool(args.include_controls),
        "ranking": list(importance.ranking),
        "importance": [float(v) for v in importance.weights],
        "support_masks": [list(mask) for mask in assign.support_masks],
    }
    _write_json(run_dir / "interpret_summary.json", summary)
    top = importance.ranking[0]
    print(f"top subgraph {top} (weight {importance.weights[top]:.4f}); "
          f"support {len(assign.support_masks[top])} nodes")
    print(f"artifacts in {run_dir}")
    return 0


def _cmd_synth(args) -> int:
    spec = _load_synth_spec(args.spec, args.seed)
    ds = generate_synthetic(spec)
    run_dir = _resolve_run_dir(args.out, "synth")
    manifest = save_dataset(ds, run_dir, file_format=args.format)
    print(f"wrote {len(ds.subjects)} subjects to {manifest}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = run_gradcheck(seed=args.seed, threshold=args.threshold)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 3


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


_COMMANDS = {
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "interpret": _cmd_interpret,
    "synth": _cmd_synth,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except HierconnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
