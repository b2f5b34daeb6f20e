"""Command-line entry point.

Subcommands: gen-data, train, finetune-var, generate, evaluate, ablate,
denoise, plot. Every subcommand is deterministic given its seeds.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
divergence.

Config files are YAML; any field can also be overridden from the command
line with repeated ``--set section.field=value`` flags (sections: model,
train, or the dataset spec's own fields for gen-data).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np
import torch
import yaml

from . import applications
from .ablations import SUITES, run_suite
from .data import DatasetSpec, generate_dataset, load_dataset, load_motion, save_dataset, save_motion, split_motions
from .errors import (
    ActorError,
    DivergedLoss,
    UnknownAction,
    UnknownVariant,
)
from .evaluation import evaluate, evaluate_real, format_report_table, train_recognizer
from .model import ModelConfig, build_variant
from .plots import plot_motion_strip
from .training import Checkpoint, TrainConfig, finetune_variable, load_checkpoint, save_checkpoint, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; this CLI reserves 2 for data errors
    def error(self, message):
        raise UsageError(message)


def _parse_set_overrides(pairs) -> dict:
    out: dict = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def _merge(base: dict, overrides: dict) -> dict:
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def _load_yaml(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return yaml.safe_load(f) or {}


def _build_configs(args, action_names) -> tuple[ModelConfig, TrainConfig]:
    raw = _load_yaml(getattr(args, "config", None))
    _merge(raw, _parse_set_overrides(getattr(args, "set", None)))
    model_raw = dict(raw.get("model", {}))
    train_raw = dict(raw.get("train", {}))
    model_raw.setdefault("num_actions", len(action_names))
    model_raw.setdefault("action_names", tuple(action_names))
    if model_raw["num_actions"] != len(action_names):
        raise ActorError(
            f"config num_actions={model_raw['num_actions']} but dataset has "
            f"{len(action_names)} actions"
        )
    for flag in ("epochs", "batch_size", "seed"):
        value = getattr(args, flag, None)
        if value is not None:
            train_raw[flag] = value
    if getattr(args, "learning_rate", None) is not None:
        train_raw["learning_rate"] = args.learning_rate
    if model_raw.get("variant") == "fully_connected":
        model_raw.setdefault("fixed_length", train_raw.get("fixed_duration", 60))
    if isinstance(train_raw.get("variable_range"), list):
        train_raw["variable_range"] = tuple(train_raw["variable_range"])
    return ModelConfig(**model_raw), TrainConfig(**train_raw)


def _resolve_action(spec: str, config: ModelConfig) -> int:
    if config.action_names and spec in config.action_names:
        return config.action_names.index(spec)
    try:
        action = int(spec)
    except ValueError:
        known = list(config.action_names or [])
        raise UnknownAction(f"unknown action {spec!r}; known: {known}") from None
    if not 0 <= action < config.num_actions:
        raise UnknownAction(f"action id {action} outside [0, {config.num_actions})")
    return action


def _epoch_logger(terms: dict) -> None:
    parts = [f"epoch {terms['epoch']:4d}"]
    for key in ("total", "rotation", "translation", "vertex", "joint", "kl"):
        if key in terms:
            parts.append(f"{key} {terms[key]:.6g}")
    print("  ".join(parts))


def _write_json(payload: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# -- subcommand handlers ------------------------------------------------------------


def cmd_gen_data(args) -> int:
    raw = _load_yaml(args.spec)
    _merge(raw, _parse_set_overrides(args.set))
    if isinstance(raw.get("duration"), list):
        raw["duration"] = tuple(raw["duration"])
    spec = DatasetSpec(**raw)
    motions, splits = generate_dataset(spec)
    save_dataset(motions, splits, spec.actions, args.out)
    print(f"wrote {len(motions)} motions ({splits.count('train')} train / "
          f"{splits.count('test')} test) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    motions, splits, action_names = load_dataset(args.data)
    model_config, train_config = _build_configs(args, action_names)
    model = build_variant(model_config, seed=train_config.seed)
    train_set = split_motions(motions, splits, "train")
    try:
        checkpoint, history = train(model, train_set, train_config, log=_epoch_logger)
    except DivergedLoss as exc:
        if exc.last_good_state is not None:
            model.load_state_dict(exc.last_good_state)
            ckpt = Checkpoint.from_model(model, model_config, train_config, exc.step)
            save_checkpoint(ckpt, args.out)
            print(f"diverged at step {exc.step}; last good checkpoint saved to {args.out}",
                  file=sys.stderr)
        raise
    save_checkpoint(checkpoint, args.out)
    _write_json({"epochs": history["epochs"]}, str(args.out) + ".history.json")
    print(f"saved checkpoint to {args.out}")
    return EXIT_OK


def cmd_finetune_var(args) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    motions, splits, _ = load_dataset(args.data)
    train_set = split_motions(motions, splits, "train")
    lo, hi = args.range
    new_ckpt, history = finetune_variable(
        checkpoint, train_set, (lo, hi), epochs=args.epochs, seed=args.seed,
        log=_epoch_logger,
    )
    save_checkpoint(new_ckpt, args.out)
    _write_json({"epochs": history["epochs"]}, str(args.out) + ".history.json")
    print(f"saved finetuned checkpoint to {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    model = checkpoint.build_model()
    action = _resolve_action(args.action, checkpoint.model_config)
    generator = torch.Generator().manual_seed(args.seed)
    motion = model.generate(action, args.duration, generator=generator)
    save_motion(motion, args.out)
    print(f"wrote {args.duration}-frame motion (action {action}) to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    model = checkpoint.build_model()
    motions, splits, action_names = load_dataset(args.data)
    train_set = split_motions(motions, splits, "train")
    test_set = split_motions(motions, splits, "test")
    recognizer = train_recognizer(
        train_set, len(action_names), epochs=args.recognizer_epochs, seed=args.seed
    )
    report = evaluate(
        model, recognizer, train_set, test_set, per_action_count=args.per_action,
        seeds=args.seeds, duration=args.duration, base_seed=args.seed,
    )
    real = evaluate_real(
        recognizer, train_set, test_set, per_action_count=args.per_action,
        seeds=args.seeds, base_seed=args.seed,
    )
    table = format_report_table({"Real": real, "Generated": report})
    print(table)
    if args.out:
        _write_json({"real": real.to_dict(), "generated": report.to_dict()},
                    str(args.out) + ".json")
        with open(str(args.out) + ".txt", "w") as f:
            f.write(table + "\n")
        print(f"report written to {args.out}.json / {args.out}.txt")
    return EXIT_OK


def cmd_ablate(args) -> int:
    result = run_suite(
        args.suite,
        dataset_dir=args.data,
        epochs=args.epochs,
        finetune_epochs=args.finetune_epochs,
        eval_seeds=args.seeds,
        per_action_count=args.per_action,
        recognizer_epochs=args.recognizer_epochs,
        seed=args.seed,
        workers=args.workers,
        fixed_duration=args.duration,
    )
    table = result.format_table()
    print(table)
    if args.out:
        _write_json(result.to_dict(), str(args.out) + ".json")
        with open(str(args.out) + ".txt", "w") as f:
            f.write(table + "\n")
        print(f"ablation results written to {args.out}.json / {args.out}.txt")
    return EXIT_OK


def cmd_denoise(args) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    model = checkpoint.build_model()
    motion = load_motion(args.infile)
    action = motion.action if args.action is None else _resolve_action(args.action, checkpoint.model_config)
    denoised = applications.denoise(model, motion, action)
    save_motion(denoised, args.out)
    if args.report_jitter:
        before = applications.jitter_score(motion)
        after = applications.jitter_score(denoised)
        print(f"jitter before {before:.6g}  after {after:.6g}  "
              f"ratio {after / before if before else float('inf'):.4f}")
    print(f"wrote denoised motion to {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    motion = load_motion(args.infile)
    plot_motion_strip(motion, args.out, frames=args.frames)
    print(f"wrote trajectory strip to {args.out}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> Parser:
    parser = Parser(prog="actor", description=__doc__,
                    formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a dataset directory")
    p.add_argument("--spec", help="dataset spec YAML (defaults apply if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fixed-length training")
    p.add_argument("--config", help="YAML with model: / train: sections")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune-var", help="variable-length finetuning")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--range", nargs=2, type=int, default=(60, 100), metavar=("LOW", "HIGH"))
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune_var)

    p = sub.add_parser("generate", help="sample one motion file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--action", required=True, help="action name or id")
    p.add_argument("--duration", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="full metric protocol")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--per-action", dest="per_action", type=int, default=20)
    p.add_argument("--duration", type=int, default=60)
    p.add_argument("--recognizer-epochs", dest="recognizer_epochs", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report path prefix (.json and .txt written)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run one sweep grid")
    p.add_argument("--suite", required=True, choices=SUITES)
    p.add_argument("--data", required=True)
    p.add_argument("--duration", type=int, default=None,
                   help="training crop length (default: min(60, shortest train motion))")
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--finetune-epochs", dest="finetune_epochs", type=int, default=None)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--per-action", dest="per_action", type=int, default=10)
    p.add_argument("--recognizer-epochs", dest="recognizer_epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel grid workers (default: ACTOR_NUM_WORKERS or 1)")
    p.add_argument("--out", help="result path prefix (.json and .txt written)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("denoise", help="encode-decode a motion through the model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--action", default=None, help="action name or id (default: the file's label)")
    p.add_argument("--out", required=True)
    p.add_argument("--report-jitter", action="store_true")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("plot", help="static joint-trajectory strip")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=10)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnknownAction, UnknownVariant, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedLoss as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ActorError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
