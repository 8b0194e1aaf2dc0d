"""Command-line surface: gen-data, train, eval, compare, hist.

Every command is deterministic given its config; all seeds live in the
config file and can be overridden by flags (flag > file > default). Output
files are written atomically. Exit codes: 0 success, 2 config/usage,
3 I/O, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data as data_mod
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    GenerationError,
    NumericError,
    ParseError,
    UndefinedCurveError,
)
from .evaluate import evaluation_suite, write_bundle
from .fsio import atomic_write_text
from .model import (
    DETERMINISTIC,
    VARIANTS,
    HeadConfig,
    build_head,
    load_head,
    save_head,
)
from .tensor import Tensor
from .train import TrainConfig, train
from .uncertainty import mc_predict, save_reports

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

DEFAULT_CONFIG = {
    "data": {
        "k_in": 8,
        "k_out": 8,
        "feature_dim": 64,
        "per_class": 250,
        "center_scale": 1.3,
        "within_std": 1.5,
        "center_seed": 11,
        "noise_seed": 12,
        "ood_displacement": 12.0,
        "formats": ["bfv"],
    },
    "head": {
        "hidden_dims": [256, 256],
        "dropout_rate": 0.2,
        "estimator": "flipout",
        "init_seed": 100,
    },
    "train": {
        "epochs": 30,
        "batch_size": 64,
        "learning_rate": 1e-3,
        "optimizer": "adam",
        "momentum": 0.9,
        "beta1": 0.9,
        "beta2": 0.999,
        "adam_eps": 1e-8,
        "kl_weight_mode": "one-over-n",
        "kl_weight_const": 1.0,
        "seed": 7,
        "shuffle": True,
    },
    "inference": {"mc_samples": 40, "seed": 1234},
    "eval": {"bins": 50},
}


def load_config(path: str | None) -> dict:
    """Defaults, overlaid with the JSON file if given. Unknown keys reject."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    for section, values in user.items():
        if section not in cfg:
            raise ConfigError(
                f"{path}: unknown config section {section!r};"
                f" expected one of {sorted(cfg)}"
            )
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: section {section!r} must be an object")
        for key, value in values.items():
            if key not in cfg[section]:
                raise ConfigError(
                    f"{path}: unknown key {section}.{key};"
                    f" expected one of {sorted(cfg[section])}"
                )
            cfg[section][key] = value
    return cfg


def synth_spec_from(cfg: dict) -> data_mod.SynthSpec:
    d = cfg["data"]
    return data_mod.SynthSpec(
        k_in=int(d["k_in"]),
        k_out=int(d["k_out"]),
        feature_dim=int(d["feature_dim"]),
        per_class=int(d["per_class"]),
        center_scale=float(d["center_scale"]),
        within_std=float(d["within_std"]),
        center_seed=int(d["center_seed"]),
        noise_seed=int(d["noise_seed"]),
        ood_displacement=float(d["ood_displacement"]),
    )


def head_config_from(cfg: dict, variant: str, feature_dim: int, k: int) -> HeadConfig:
    h = cfg["head"]
    return HeadConfig(
        input_dim=feature_dim,
        hidden_dims=tuple(int(x) for x in h["hidden_dims"]),
        num_classes=k,
        variant=variant,
        dropout_rate=float(h["dropout_rate"]),
        estimator=h["estimator"],
    )


def train_config_from(cfg: dict, seed_offset: int = 0) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        epochs=int(t["epochs"]),
        batch_size=int(t["batch_size"]),
        learning_rate=float(t["learning_rate"]),
        optimizer=t["optimizer"],
        momentum=float(t["momentum"]),
        beta1=float(t["beta1"]),
        beta2=float(t["beta2"]),
        adam_eps=float(t["adam_eps"]),
        kl_weight_mode=t["kl_weight_mode"],
        kl_weight_const=float(t["kl_weight_const"]),
        seed=int(t["seed"]) + seed_offset,
        shuffle=bool(t["shuffle"]),
    )


def _dataset_paths(out_dir: Path, fmt: str) -> dict[str, Path]:
    return {name: out_dir / f"{name}.{fmt}" for name in ("train", "val", "ood")}


def _find_dataset(out_dir: Path, name: str) -> tuple[Path, str]:
    for fmt in ("bfv", "csv"):
        path = out_dir / f"{name}.{fmt}"
        if path.exists():
            return path, fmt
    raise FileNotFoundError(f"no {name}.bfv or {name}.csv under {out_dir}")


# ---- commands ------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["data"]["center_seed"] = args.seed
        cfg["data"]["noise_seed"] = args.seed + 1
    if getattr(args, "classes", None) is not None:
        cfg["data"]["k_in"] = args.classes
        cfg["data"]["k_out"] = args.classes
    formats = [args.format] if args.format else list(cfg["data"]["formats"])
    spec = synth_spec_from(cfg)
    sets = dict(zip(("train", "val", "ood"), data_mod.generate(spec)))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for fmt in formats:
        for name, dset in sets.items():
            data_mod.save_features(dset, _dataset_paths(out_dir, fmt)[name], fmt)
    train_set = sets["train"]
    counts = np.bincount(train_set.labels, minlength=spec.k_in)
    print(
        f"generated {sum(s.n for s in sets.values())} rows"
        f" (train {sets['train'].n}, val {sets['val'].n}, ood {sets['ood'].n}),"
        f" F={spec.feature_dim}, K={spec.k_in}"
    )
    print(f"train rows per class: {counts.tolist()}")
    print(f"formats: {', '.join(formats)} -> {out_dir}")
    return EXIT_OK


def _train_one(cfg, variant, out_dir, seed_offset=0, tag=None):
    """Train one variant against the datasets in out_dir; returns the head."""
    tag = tag or variant
    train_path, fmt = _find_dataset(out_dir, "train")
    train_set = data_mod.load_features(train_path, fmt)
    k = train_set.num_classes()
    head_cfg = head_config_from(cfg, variant, train_set.feature_dim, k)
    head = build_head(head_cfg, init_seed=int(cfg["head"]["init_seed"]) + seed_offset)
    train_cfg = train_config_from(cfg, seed_offset)
    head, report = train(head, train_set, train_cfg)
    save_head(head, out_dir / f"checkpoint_{tag}.json")
    report.save(out_dir / f"train_report_{tag}.csv")
    final_acc = report.epochs[-1].accuracy if report.epochs else float("nan")
    print(
        f"[{tag}] trained {train_cfg.epochs} epochs"
        f" (train seed {train_cfg.seed}), final train accuracy {final_acc:.4f}"
    )
    return head


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    out_dir = Path(args.out)
    _train_one(cfg, args.variant, out_dir)
    return EXIT_OK


def _eval_one(cfg, head, out_dir, eval_dir, mc_samples):
    """Evaluate a trained head on val (+ ood when present); writes artifacts."""
    val_path, fmt = _find_dataset(out_dir, "val")
    val_set = data_mod.load_features(val_path, fmt)
    if head.config.input_dim != val_set.feature_dim:
        raise ConfigError(
            f"checkpoint expects F={head.config.input_dim} features but the"
            f" dataset has F={val_set.feature_dim}"
        )
    k_data = val_set.num_classes()
    if k_data > head.config.num_classes:
        raise ConfigError(
            f"checkpoint has K={head.config.num_classes} classes but the"
            f" dataset needs K={k_data}"
        )
    try:
        ood_path, ood_fmt = _find_dataset(out_dir, "ood")
        ood_set = data_mod.load_features(ood_path, ood_fmt)
        features = np.concatenate([val_set.features, ood_set.features])
        labels = np.concatenate([val_set.labels, ood_set.labels])
        flags = np.concatenate([val_set.is_ood, ood_set.is_ood])
    except FileNotFoundError:
        print("notice: no OOD file found; OOD metrics will be omitted")
        features, labels, flags = val_set.features, val_set.labels, val_set.is_ood

    t = int(mc_samples)
    if head.config.variant == DETERMINISTIC and t > 1:
        print(
            f"warning: deterministic variant ignores stochastic passes;"
            f" using T=1 instead of requested T={t}"
        )
        t = 1
    pds = mc_predict(head, Tensor(features), t=t, seed=int(cfg["inference"]["seed"]))
    bundle = evaluation_suite(pds, labels, flags, bins=int(cfg["eval"]["bins"]))
    eval_dir = Path(eval_dir)
    eval_dir.mkdir(parents=True, exist_ok=True)
    save_reports(eval_dir / "report.csv", bundle.reports, labels, flags)
    write_bundle(bundle, eval_dir)
    for notice in bundle.notices:
        print(f"notice: {notice}")
    return bundle


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["inference"]["seed"] = args.seed
    mc_samples = (
        args.mc_samples if args.mc_samples is not None else cfg["inference"]["mc_samples"]
    )
    out_dir = Path(args.out)
    ckpt = args.checkpoint or str(out_dir / f"checkpoint_{args.variant}.json")
    head = load_head(ckpt)
    bundle = _eval_one(cfg, head, out_dir, out_dir / f"eval_{args.variant}", mc_samples)
    print(json.dumps(bundle.summary, indent=1, sort_keys=True))
    return EXIT_OK


TABLE_COLUMNS = (
    "top1",
    "top5",
    "pr_auc_micro",
    "pr_auc_correctness",
    "roc_auc_micro",
    "roc_auc_correctness",
    "ood_auroc_entropy",
    "ood_auroc_bald",
)


def _format_cell(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def comparison_tables(rows: dict[str, dict]) -> tuple[str, str]:
    """(markdown, csv) for the three-variant comparison."""
    md = io.StringIO()
    md.write("| model | " + " | ".join(TABLE_COLUMNS) + " |\n")
    md.write("|" + "---|" * (len(TABLE_COLUMNS) + 1) + "\n")
    csv_buf = io.StringIO()
    csv_buf.write("model," + ",".join(TABLE_COLUMNS) + "\n")
    for variant in VARIANTS:
        summary = rows[variant]
        md.write(
            f"| {variant} | "
            + " | ".join(_format_cell(summary[c]) for c in TABLE_COLUMNS)
            + " |\n"
        )
        csv_buf.write(
            variant
            + ","
            + ",".join(
                "" if summary[c] is None else repr(summary[c]) for c in TABLE_COLUMNS
            )
            + "\n"
        )
    return md.getvalue(), csv_buf.getvalue()


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not (out_dir / "train.bfv").exists() and not (out_dir / "train.csv").exists():
        gen_args = argparse.Namespace(
            config=args.config,
            out=args.out,
            seed=None,
            format=None,
            classes=getattr(args, "classes", None),
        )
        cmd_gen_data(gen_args)
    mc_samples = (
        args.mc_samples if args.mc_samples is not None else cfg["inference"]["mc_samples"]
    )

    def job(idx_variant):
        idx, variant = idx_variant
        head = _train_one(cfg, variant, out_dir, seed_offset=idx, tag=variant)
        bundle = _eval_one(cfg, head, out_dir, out_dir / f"eval_{variant}", mc_samples)
        return variant, bundle.summary

    jobs = list(enumerate(VARIANTS))
    workers = max(1, int(os.environ.get("BVI_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = dict(pool.map(job, jobs))
    else:
        results = dict(map(job, jobs))

    md, csv_text = comparison_tables(results)
    atomic_write_text(out_dir / "compare.md", md)
    atomic_write_text(out_dir / "compare.csv", csv_text)
    print(md, end="")
    return EXIT_OK


def cmd_hist(args) -> int:
    rows = []
    with open(args.input, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if args.column not in header:
            raise ConfigError(
                f"column {args.column!r} not in {args.input} (has {header})"
            )
        col = header.index(args.column)
        for line in fh:
            if line.strip():
                rows.append(float(line.strip().split(",")[col]))
    from .evaluate import density_histogram

    hist = density_histogram(rows, args.bins, args.lo, args.hi)
    atomic_write_text(args.out, hist.to_csv())
    print(f"wrote {args.bins}-bin histogram of {len(rows)} values to {args.out}")
    return EXIT_OK


# ---- parser / dispatch ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bvihead",
        description=(
            "Bayesian classification heads: synthetic feature generation,"
            " variational training, Monte Carlo uncertainty, and evaluation"
            " artifacts (curves, histograms, comparison tables)."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant=False, mc=False, checkpoint=False, fmt=False):
        p.add_argument("--config", help="JSON experiment config (defaults apply)")
        p.add_argument("--out", default="runs/default", help="workspace directory")
        p.add_argument("--seed", type=int, help="override the command's seed")
        if variant:
            p.add_argument(
                "--variant",
                choices=VARIANTS,
                default="stochastic-vi",
                help="head variant",
            )
        if mc:
            p.add_argument(
                "--mc-samples", type=int, help="stochastic forward passes (default 40)"
            )
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint path (default from --out)")
        if fmt:
            p.add_argument("--format", choices=("csv", "bfv"), help="dataset format")

    p_gen = sub.add_parser("gen-data", help="generate synthetic feature datasets")
    common(p_gen, fmt=True)
    p_gen.add_argument(
        "--classes", type=int, help="preset: N in- and N out-of-distribution classes"
    )
    p_gen.set_defaults(func=cmd_gen_data)

    p_train = sub.add_parser("train", help="train one head variant")
    common(p_train, variant=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="Monte Carlo evaluation of a checkpoint")
    common(p_eval, variant=True, mc=True, checkpoint=True)
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser("compare", help="train and evaluate all three variants")
    common(p_cmp, mc=True)
    p_cmp.add_argument(
        "--classes", type=int, help="preset: N in- and N out-of-distribution classes"
    )
    p_cmp.set_defaults(func=cmd_compare)

    p_hist = sub.add_parser("hist", help="density histogram from a report CSV column")
    p_hist.add_argument("--input", required=True, help="CSV file with a header row")
    p_hist.add_argument("--column", required=True, help="column to histogram")
    p_hist.add_argument("--bins", type=int, default=50)
    p_hist.add_argument("--lo", type=float, default=0.0)
    p_hist.add_argument("--hi", type=float, default=1.0)
    p_hist.add_argument("--out", default="hist.csv", help="output CSV path")
    p_hist.set_defaults(func=cmd_hist)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError, DataError, GenerationError,
            UndefinedCurveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, FileNotFoundError, IsADirectoryError, PermissionError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
