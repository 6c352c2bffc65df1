"""Command-line entry point wiring the pipeline stages into reproducible runs.

Subcommands: gen-synth, pseudolabel, weights, train, eval, ablate, validate.
Every run echoes its resolved configuration into the emitted JSON, and all
artifacts are byte-identical across runs with identical flags and seed.

Exit codes: 0 success, 1 I/O or validation failure, 2 bad flags. Failures
print a machine-readable {"error": {...}} object to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .data import SynthConfig, AugmentationConfig, gen_synthetic, load_dataset, save_dataset
from .errors import ConfigError, TrustError
from .pseudolabel import (
    generate_pseudo_labels,
    load_pseudo_labels,
    pseudo_label_accuracy,
    save_pseudo_labels,
    train_text_classifier,
)
from .trainer import TrainConfig, ablate, evaluate, load_model, save_model, train
from .uncertainty import save_weights, load_weights, score_dataset, weight_histogram

DEFAULT_SEED = 0


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as machine-readable JSON."""

    def error(self, message):
        _print_error("UsageError", message)
        raise SystemExit(2)


def _print_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message}}) + "\n")


def _emit(obj: dict, path: str | None) -> None:
    # sorted keys and a trailing newline so identical runs are byte-identical
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    sys.stdout.write(text)
    if path is not None:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("TRUST_SEED")
    if env is None:
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"TRUST_SEED must be an integer, got {env!r}")


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (falls back to $TRUST_SEED, then 0)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--tau", type=float, default=d.tau)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--hidden", type=int, default=d.hidden)
    p.add_argument("--feature-dim", type=int, default=d.feature_dim)
    p.add_argument("--scoring-batch-size", type=int, default=d.scoring_batch_size)
    p.add_argument("--text-epochs", type=int, default=d.text_epochs)
    p.add_argument("--text-lr", type=float, default=d.text_lr)
    a = AugmentationConfig()
    p.add_argument("--sigma-weak", type=float, default=a.sigma_weak)
    p.add_argument("--sigma-strong", type=float, default=a.sigma_strong)
    p.add_argument("--dropout-strong", type=float, default=a.dropout_strong)
    p.add_argument("--soft-ctr", action=argparse.BooleanOptionalAction, default=d.use_soft_ctr)
    p.add_argument("--hard-ctr", action=argparse.BooleanOptionalAction, default=d.use_hard_ctr)
    p.add_argument("--uncertainty", action=argparse.BooleanOptionalAction, default=d.use_uncertainty)
    _add_seed(p)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        lr=args.lr,
        tau=args.tau,
        gamma=args.gamma,
        augmentation=AugmentationConfig(sigma_weak=args.sigma_weak,
                                        sigma_strong=args.sigma_strong,
                                        dropout_strong=args.dropout_strong),
        seed=_resolve_seed(args.seed),
        use_soft_ctr=args.soft_ctr,
        use_hard_ctr=args.hard_ctr,
        use_uncertainty=args.uncertainty,
        hidden=args.hidden,
        feature_dim=args.feature_dim,
        scoring_batch_size=args.scoring_batch_size,
        text_epochs=args.text_epochs,
        text_lr=args.text_lr,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trust")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synth", help="generate a synthetic source/target dataset pair")
    d = SynthConfig()
    g.add_argument("--classes", type=int, default=d.n_classes)
    g.add_argument("--per-class", type=int, default=d.n_per_class)
    g.add_argument("--d-img", type=int, default=d.d_img)
    g.add_argument("--d-txt", type=int, default=d.d_txt)
    g.add_argument("--d-clip", type=int, default=d.d_clip)
    g.add_argument("--shift-angle", type=float, default=d.shift_angle)
    g.add_argument("--shift-offset", type=float, default=d.shift_offset)
    g.add_argument("--noise-img", type=float, default=d.noise_img)
    g.add_argument("--noise-txt", type=float, default=d.noise_txt)
    g.add_argument("--noise-clip", type=float, default=d.noise_clip)
    g.add_argument("--rho", type=float, default=d.rho)
    g.add_argument("--out", required=True, help="directory receiving source/ and target/")
    _add_seed(g)

    p = sub.add_parser("pseudolabel", help="train the caption classifier and label the target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True, help="directory receiving the pseudo-label files")
    p.add_argument("--report", default=None, help="also write the JSON report here")
    td = TrainConfig()
    p.add_argument("--text-epochs", type=int, default=td.text_epochs)
    p.add_argument("--text-lr", type=float, default=td.text_lr)
    _add_seed(p)

    w = sub.add_parser("weights", help="score caption reliability on the target")
    w.add_argument("--target", required=True)
    w.add_argument("--out", required=True, help="directory receiving the weight file")
    w.add_argument("--report", default=None, help="also write the JSON report here")
    # the scorer's own default batch (the trainer deliberately uses a smaller one)
    w.add_argument("--scoring-batch-size", type=int, default=64)
    w.add_argument("--gamma", type=float, default=TrainConfig().gamma)
    _add_seed(w)

    t = sub.add_parser("train", help="train the vision model on source + target")
    t.add_argument("--source", required=True)
    t.add_argument("--target", required=True)
    t.add_argument("--pseudo", default=None, help="pseudo-label directory")
    t.add_argument("--weights", default=None, help="reliability-weight directory")
    t.add_argument("--auto", action="store_true",
                   help="compute missing pseudo-labels and weights (in that order)")
    t.add_argument("--out", default=None, help="model checkpoint directory")
    t.add_argument("--report", default=None, help="also write the JSON report here")
    _add_train_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a labeled dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", default=None)

    a = sub.add_parser("ablate", help="run the five-row loss ablation")
    a.add_argument("--source", required=True)
    a.add_argument("--target", required=True)
    a.add_argument("--out", default=None, help="also write the JSON table here")
    _add_train_flags(a)

    v = sub.add_parser("validate", help="check a dataset directory against the file format")
    v.add_argument("directory")
    return parser


def _cmd_gen_synth(args) -> int:
    config = SynthConfig(
        n_classes=args.classes,
        n_per_class=args.per_class,
        d_img=args.d_img,
        d_txt=args.d_txt,
        d_clip=args.d_clip,
        shift_angle=args.shift_angle,
        shift_offset=args.shift_offset,
        noise_img=args.noise_img,
        noise_txt=args.noise_txt,
        noise_clip=args.noise_clip,
        rho=args.rho,
        seed=_resolve_seed(args.seed),
    )
    source, target = gen_synthetic(config)
    out = Path(args.out)
    save_dataset(source, out / "source")
    save_dataset(target, out / "target")
    _emit({
        "command": "gen-synth",
        "config": dataclasses.asdict(config),
        "source": str(out / "source"),
        "target": str(out / "target"),
        "n_source": source.n,
        "n_target": target.n,
    }, None)
    return 0


def _cmd_pseudolabel(args) -> int:
    seed = _resolve_seed(args.seed)
    source = load_dataset(args.source)
    target = load_dataset(args.target)
    clf = train_text_classifier(source, epochs=args.text_epochs,
                                lr=args.text_lr, seed=seed)
    pseudo = generate_pseudo_labels(clf, target)
    save_pseudo_labels(pseudo, Path(args.out))
    report = {
        "command": "pseudolabel",
        "config": {"text_epochs": args.text_epochs, "text_lr": args.text_lr,
                   "seed": seed},
        "source": args.source,
        "target": args.target,
        "out": args.out,
        "n": int(pseudo.labels.size),
        "final_train_ce": clf.loss_history[-1],
        # diagnostic only: ground truth never feeds back into training
        "accuracy_vs_labels": (pseudo_label_accuracy(pseudo, target.labels)
                               if target.labels is not None else None),
    }
    _emit(report, args.report)
    return 0


def _cmd_weights(args) -> int:
    seed = _resolve_seed(args.seed)
    target = load_dataset(args.target)
    weights = score_dataset(target, scoring_batch_size=args.scoring_batch_size,
                            gamma=args.gamma, seed=seed)
    save_weights(weights, Path(args.out))
    report = {
        "command": "weights",
        "config": {"scoring_batch_size": args.scoring_batch_size,
                   "gamma": args.gamma, "seed": seed},
        "target": args.target,
        "out": args.out,
        "n": int(weights.w.size),
        "mean_weight": float(weights.w.mean()),
    }
    if target.corrupted_mask is not None:
        clean_hist, corr_hist, score = weight_histogram(weights, target.corrupted_mask)
        report["histogram"] = {"bins": 50, "range": [0.0, 1.0],
                               "clean": clean_hist.tolist(),
                               "corrupted": corr_hist.tolist()}
        report["auroc"] = score
    else:
        report["histogram"] = {"bins": 50, "range": [0.0, 1.0],
                               "all": np.histogram(weights.w, bins=50,
                                                   range=(0.0, 1.0))[0].tolist()}
        report["auroc"] = None
    _emit(report, args.report)
    return 0


def _cmd_train(args) -> int:
    config = _train_config(args)
    source = load_dataset(args.source)
    target = load_dataset(args.target)
    pseudo = load_pseudo_labels(Path(args.pseudo)) if args.pseudo else None
    weights = load_weights(Path(args.weights)) if args.weights else None
    if pseudo is None and not args.auto:
        raise ConfigError("missing --pseudo; pass --auto to compute pseudo-labels")
    if weights is None and config.use_uncertainty and not args.auto:
        raise ConfigError("missing --weights; pass --auto to compute them")
    model, report = train(source, target, config, pseudo=pseudo, weights=weights)
    if args.out is not None:
        save_model(model, Path(args.out))
    _emit({
        "command": "train",
        "source": args.source,
        "target": args.target,
        "model_dir": args.out,
        **report.to_json_dict(),
    }, args.report)
    return 0


def _cmd_eval(args) -> int:
    model = load_model(Path(args.model))
    data = load_dataset(args.data)
    acc = evaluate(model, data)
    _emit({
        "command": "eval",
        "model": args.model,
        "data": args.data,
        "n": data.n,
        "accuracy": acc,
    }, args.report)
    return 0


def _cmd_ablate(args) -> int:
    config = _train_config(args)
    source = load_dataset(args.source)
    target = load_dataset(args.target)
    result = ablate(source, target, config)
    _emit({
        "command": "ablate",
        "source": args.source,
        "target": args.target,
        **result.to_json_dict(),
    }, args.out)
    return 0


def _cmd_validate(args) -> int:
    dataset = load_dataset(args.directory)
    _emit({
        "command": "validate",
        "directory": args.directory,
        "ok": True,
        "domain": dataset.domain,
        "n": dataset.n,
        "c": dataset.num_classes,
        "dims": {"image": dataset.image_emb.shape[1],
                 "caption": dataset.caption_emb.shape[1],
                 "clip": dataset.clip_img.shape[1]},
        "has_labels": dataset.labels is not None,
        "has_corrupted_mask": dataset.corrupted_mask is not None,
    }, None)
    return 0


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "pseudolabel": _cmd_pseudolabel,
    "weights": _cmd_weights,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "validate": _cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        # bad flag values or combinations
        _print_error(type(e).__name__, str(e))
        return 2
    except TrustError as e:
        _print_error(type(e).__name__, str(e))
        return 1
    except OSError as e:
        _print_error(type(e).__name__, str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
