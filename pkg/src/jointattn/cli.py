"""Command-line entry point: ``jointattn <command> ...``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .dataset import PRESETS, generate_synthetic, load_dataset, prepare, save_dataset
from .evaluation import ablation_attention_loss, ablation_no_attention, loocv
from .model import ModelConfig, init_network, save_network
from .report import emit_reports, read_run_report
from .runtime import keep_freed_memory
from .training import LossWeights, TrainConfig, apply_overrides, class_weights, read_config, train, write_loss_history

logger = logging.getLogger("jointattn")

# model keys a config file may set; the joint and class counts come from the data
_MODEL_KEYS = {"channels", "kernel", "padding", "stride", "reduction", "attention"}
_ALIASES = {"lambda": "lam"}


class Settings:
    """Training, loss and architecture options gathered from defaults and a config file."""

    def __init__(self, kv: dict[str, str] | None = None):
        kv = {_ALIASES.get(k, k): v for k, v in (kv or {}).items()}
        known = {f.name for f in fields(TrainConfig)} | {"gamma", "lam", "frames"} | _MODEL_KEYS
        unknown = sorted(set(kv) - known)
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
        self.train = apply_overrides(TrainConfig(), kv)
        self.weights = apply_overrides(LossWeights(), kv)
        self.model = {k: v for k, v in kv.items() if k in _MODEL_KEYS}
        self.frames = int(kv.get("frames", 200))

    def model_config(self, n_joints: int, attention: bool | None = None) -> ModelConfig:
        cfg = ModelConfig.from_mapping(self.model)
        cfg = replace(cfg, n_joints=n_joints)
        return cfg if attention is None else replace(cfg, attention=attention)


def _settings(args) -> Settings:
    s = Settings(read_config(args.config) if getattr(args, "config", None) else None)
    if getattr(args, "seed", None) is not None:
        s.train = replace(s.train, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        s.train = replace(s.train, epochs=args.epochs)
    if getattr(args, "gamma", None) is not None:
        s.weights = replace(s.weights, gamma=args.gamma)
    if getattr(args, "frames", None) is not None:
        s.frames = args.frames
    return s


def _load(args, settings: Settings):
    manifest = args.manifest or Path(args.data) / "manifest.txt"
    return prepare(load_dataset(args.data, manifest), settings.frames)


def cmd_synth(args) -> None:
    cfg = PRESETS[args.preset]
    if args.frames is not None:
        cfg = replace(cfg, n_frames=args.frames)
    manifest = save_dataset(generate_synthetic(cfg, args.seed), args.out)
    print(f"wrote {manifest}")


def cmd_train(args) -> None:
    s = _settings(args)
    ds = _load(args, s)
    weights = replace(s.weights, alpha=tuple(class_weights(ds.n, ds.class_counts, ds.n_classes).tolist()))
    model_cfg = s.model_config(len(ds.joint_names))
    net = init_network(model_cfg, s.train.seed)
    net, history = train(net, ds, s.train, weights)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_network(net, out / "network.txt")
    write_loss_history(history, out / "loss.csv")
    final = f"{history[-1].total:.6f}" if history else "n/a"
    print(f"trained {s.train.epochs} epochs on {ds.n} samples; final loss {final}; wrote {out}")


def cmd_loocv(args) -> None:
    s = _settings(args)
    ds = _load(args, s)
    model_cfg = s.model_config(len(ds.joint_names), attention=False if args.no_attention else None)
    report = loocv(ds, s.train, s.weights, model_cfg=model_cfg, jobs=args.jobs)
    emit_reports(report, args.out)
    n_correct = sum(f.correct for f in report.folds)
    print(f"accuracy {report.accuracy:.4f} ({n_correct}/{len(report.folds)}); wrote {args.out}")


def cmd_ablate(args) -> None:
    s = _settings(args)
    ds = _load(args, s)
    gamma = s.weights.gamma if s.weights.gamma > 0 else LossWeights().gamma
    without, with_ = ablation_attention_loss(ds, s.train, s.weights, gamma=gamma, jobs=args.jobs)
    out = Path(args.out)
    emit_reports(without, out / "without_attention_loss")
    emit_reports(with_, out / "with_attention_loss")
    rows = [["metric", "without", "with"], ["accuracy", repr(without.accuracy), repr(with_.accuracy)]]
    a, b = without.attention_stats, with_.attention_stats
    rows.append(["average_attention", repr(a["average_attention"]), repr(b["average_attention"])])
    for t, ca, cb in zip(a["thresholds"], a["counts"], b["counts"]):
        rows.append([f"joints_at_or_above_{t:g}", repr(ca), repr(cb)])
    with open(out / "comparison.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    print(
        f"average attention {a['average_attention']:.4f} -> {b['average_attention']:.4f}; "
        f"accuracy {without.accuracy:.4f} -> {with_.accuracy:.4f}; wrote {out}"
    )


def cmd_no_attention(args) -> None:
    s = _settings(args)
    ds = _load(args, s)
    report = ablation_no_attention(ds, s.train, s.weights, jobs=args.jobs)
    emit_reports(report, args.out)
    print(f"accuracy {report.accuracy:.4f} without attention; wrote {args.out}")


def cmd_report(args) -> None:
    written = emit_reports(read_run_report(args.input), args.out)
    print(f"wrote {len(written)} files to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointattn", description="Joint-attention skeleton classifier.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-fold progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p, jobs=True):
        p.add_argument("--data", required=True, help="directory holding the sample files")
        p.add_argument("--manifest", help="manifest file (default: <data>/manifest.txt)")
        p.add_argument("--config", help="key=value file overriding training/model defaults")
        p.add_argument("--seed", type=int, help="global seed")
        p.add_argument("--epochs", type=int, help="override the number of epochs")
        p.add_argument("--frames", type=int, help="resample every sequence to this many frames")
        p.add_argument("--out", required=True, help="output directory")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="folds trained in parallel")

    p = sub.add_parser("train", help="train one network on a whole dataset")
    data_args(p, jobs=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("loocv", help="leave-one-out cross-validation with reports")
    data_args(p)
    p.add_argument("--gamma", type=float, help="attention loss weight")
    p.add_argument("--no-attention", action="store_true", help="bypass the attention stage")
    p.set_defaults(func=cmd_loocv)

    p = sub.add_parser("ablate-attention-loss", help="paired LOOCV without and with the attention loss")
    data_args(p)
    p.add_argument("--gamma", type=float, help="attention loss weight for the second arm")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("ablate-attention", help="LOOCV with the attention stage bypassed")
    data_args(p)
    p.set_defaults(func=cmd_no_attention)

    p = sub.add_parser("synth", help="write a synthetic dataset and manifest")
    p.add_argument("--preset", choices=sorted(PRESETS), default="separable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, help="frames per sample")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="re-emit CSV/SVG files from a saved run report")
    p.add_argument("--in", dest="input", required=True, help="run_report.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    keep_freed_memory()
    try:
        args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"jointattn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0
