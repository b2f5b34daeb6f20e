"""Ablation sweep grids: loss terms, architecture, KL weight, batch size,
layer count, rotation representation, and generation duration.

Each suite trains one reduced-budget model per grid point on the provided
dataset, scores it with a shared recognizer, and emits a table whose rows
carry the conventional labels. Grid points may run in parallel worker
processes (capped by the ACTOR_NUM_WORKERS environment variable); results
are merged in grid order, so the output does not depend on worker count.
"""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import torch

from .body import Motion
from .data import load_dataset, split_motions
from .evaluation import (
    EvalReport,
    MotionRecognizer,
    evaluate,
    format_report_table,
    train_recognizer,
)
from .losses import LossWeights
from .model import ModelConfig, build_variant
from .training import TrainConfig, finetune_variable, train

SUITES = ("loss", "arch", "kl", "batch", "layers", "rotrep", "duration")

KL_GRID = (1e-3, 1e-4, 1e-5, 1e-6, 1e-7)
BATCH_GRID = (10, 20, 30, 40)
LAYER_GRID = (2, 4, 6, 8)
ROTREP_GRID = (("Axis-angle", 3), ("Quaternion", 4), ("Rotation matrix", 9), ("6D continuous", 6))
ARCH_GRID = (
    ("Fully connected", "fully_connected"),
    ("GRU", "gru"),
    ("Transformer", "actor"),
    ("w/ autoreg. decoder", "autoregressive_decoder"),
    ("w/out μ_a^token, Σ_a^token", "mean_pool_encoder"),
    ("w/out b_a^token", "onehot_concat_decoder"),
)
LOSS_GRID = (
    ("L_J", dict(use_rotations=False, use_translation=False, use_vertices=False, use_joints=True)),
    ("L_R", dict(use_rotations=True, use_translation=False, use_vertices=False, use_joints=False)),
    ("L_V", dict(use_rotations=False, use_translation=False, use_vertices=True, use_joints=False)),
    ("L_R + L_V", dict(use_rotations=True, use_translation=False, use_vertices=True, use_joints=False)),
)
DURATION_GRID = tuple(range(40, 125, 5))


def num_workers(explicit: int | None = None) -> int:
    """Worker-count policy: explicit argument, then ACTOR_NUM_WORKERS, then 1."""
    if explicit is not None:
        return max(1, explicit)
    env = os.environ.get("ACTOR_NUM_WORKERS")
    return max(1, int(env)) if env else 1


@dataclass
class PointResult:
    label: str
    report: EvalReport
    extras: dict = field(default_factory=dict)


@dataclass
class SuiteResult:
    suite: str
    points: list[PointResult]
    columns: tuple[str, ...] = ()

    def format_table(self) -> str:
        return format_report_table({p.label: p.report for p in self.points})

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "rows": [
                {"label": p.label, "metrics": p.report.to_dict(), "extras": p.extras}
                for p in self.points
            ],
        }


def _base_model_config(num_actions: int, action_names) -> ModelConfig:
    # reduced-budget architecture shared by all sweeps
    return ModelConfig(
        num_actions=num_actions,
        latent_dim=64,
        layers=2,
        heads=4,
        ff_dim=256,
        dropout=0.1,
        action_names=tuple(action_names),
    )


def _grid(suite: str, model_cfg: ModelConfig, train_cfg: TrainConfig):
    """(label, model config, train config) per grid point."""
    points = []
    if suite == "loss":
        for label, toggles in LOSS_GRID:
            weights = replace(train_cfg.loss, **toggles)
            points.append((label, replace(model_cfg, use_translation=False),
                           replace(train_cfg, loss=weights)))
    elif suite == "arch":
        for label, variant in ARCH_GRID:
            cfg = replace(model_cfg, variant=variant)
            if variant == "fully_connected":
                cfg = replace(cfg, fixed_length=train_cfg.fixed_duration)
            points.append((label, cfg, train_cfg))
    elif suite == "kl":
        for lam in KL_GRID:
            points.append((
                f"λ_KL = {lam:.0e}".replace("e-0", "e-"),
                model_cfg,
                replace(train_cfg, loss=replace(train_cfg.loss, lambda_kl=lam)),
            ))
    elif suite == "batch":
        for bs in BATCH_GRID:
            points.append((f"Batch size = {bs}", model_cfg, replace(train_cfg, batch_size=bs)))
    elif suite == "layers":
        for n in LAYER_GRID:
            points.append((f"{n}-layers", replace(model_cfg, layers=n), train_cfg))
    elif suite == "rotrep":
        for label, dim in ROTREP_GRID:
            points.append((label, replace(model_cfg, rotation_dim=dim), train_cfg))
    else:
        raise ValueError(f"unknown suite {suite!r}")
    return points


def _run_point(payload: dict) -> PointResult:
    """Train one grid point and evaluate it. Safe to run in a worker process."""
    torch.set_num_threads(max(1, int(payload.get("threads", 1))))
    model_cfg: ModelConfig = payload["model_config"]
    train_cfg: TrainConfig = payload["train_config"]
    recognizer: MotionRecognizer = payload["recognizer"]
    train_set: list[Motion] = payload["train_set"]
    test_set: list[Motion] = payload["test_set"]

    model = build_variant(model_cfg, seed=train_cfg.seed)
    _, history = train(model, train_set, train_cfg)
    report = evaluate(
        model, recognizer, train_set, test_set,
        per_action_count=payload["per_action_count"],
        seeds=payload["eval_seeds"],
        duration=train_cfg.fixed_duration,
        base_seed=train_cfg.seed,
    )
    last = history["epochs"][-1] if history["epochs"] else {}
    extras = {"final_kl": last.get("kl"), "final_total": last.get("total")}
    return PointResult(payload["label"], report, extras)


def run_suite(
    suite: str,
    dataset_dir=None,
    motions: list[Motion] | None = None,
    splits: list[str] | None = None,
    action_names=None,
    epochs: int = 8,
    finetune_epochs: int | None = None,
    eval_seeds: int = 3,
    per_action_count: int = 10,
    recognizer_epochs: int = 30,
    seed: int = 0,
    workers: int | None = None,
    fixed_duration: int | None = None,
) -> SuiteResult:
    """Run one sweep end to end and return its table-ready results."""
    if suite not in SUITES:
        raise ValueError(f"suite must be one of {SUITES}, got {suite!r}")
    if motions is None:
        motions, splits, action_names = load_dataset(dataset_dir)
    train_set = split_motions(motions, splits, "train")
    test_set = split_motions(motions, splits, "test")
    if fixed_duration is None:
        fixed_duration = min(60, min(len(m) for m in train_set))
    model_cfg = _base_model_config(len(action_names), action_names)
    train_cfg = TrainConfig(epochs=epochs, seed=seed, fixed_duration=fixed_duration)

    # the loss sweep discards translation, so score it with a rotations-only recognizer
    recognizer = train_recognizer(
        train_set, len(action_names),
        include_translation=(suite != "loss"),
        epochs=recognizer_epochs, seed=seed,
    )

    if suite == "duration":
        return _run_duration_suite(
            train_set, test_set, model_cfg, train_cfg, recognizer,
            epochs, finetune_epochs or epochs, eval_seeds, per_action_count,
        )

    payloads = [
        {
            "label": label,
            "model_config": m_cfg,
            "train_config": t_cfg,
            "recognizer": recognizer,
            "train_set": train_set,
            "test_set": test_set,
            "eval_seeds": eval_seeds,
            "per_action_count": per_action_count,
            "threads": 1,
        }
        for label, m_cfg, t_cfg in _grid(suite, model_cfg, train_cfg)
    ]
    n_workers = min(num_workers(workers), len(payloads))
    if n_workers <= 1:
        for p in payloads:
            p["threads"] = torch.get_num_threads()
        points = [_run_point(p) for p in payloads]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as pool:
            points = list(pool.map(_run_point, payloads))  # grid order preserved
    return SuiteResult(suite, points)


def _eval_at_duration(model, recognizer, train_set, test_set, duration,
                      eval_seeds, per_action_count, base_seed):
    report = evaluate(
        model, recognizer, train_set, test_set, per_action_count=per_action_count,
        seeds=eval_seeds, duration=duration, base_seed=base_seed,
    )
    return report


def _run_duration_suite(train_set, test_set, model_cfg, train_cfg, recognizer,
                        epochs, finetune_epochs, eval_seeds, per_action_count) -> SuiteResult:
    """Fixed-length training, then variable-length finetuning, scored across
    generation durations."""
    fixed_model = build_variant(model_cfg, seed=train_cfg.seed)
    fixed_ckpt, _ = train(fixed_model, train_set, train_cfg)
    longest = max(len(m) for m in train_set)
    var_range = (train_cfg.fixed_duration, max(train_cfg.fixed_duration, min(100, longest)))
    var_ckpt, _ = finetune_variable(fixed_ckpt, train_set, var_range, epochs=finetune_epochs)
    var_model = var_ckpt.build_model()

    points = []
    for duration in DURATION_GRID:
        fixed_report = _eval_at_duration(
            fixed_model, recognizer, train_set, test_set, duration,
            eval_seeds, per_action_count, train_cfg.seed,
        )
        var_report = _eval_at_duration(
            var_model, recognizer, train_set, test_set, duration,
            eval_seeds, per_action_count, train_cfg.seed,
        )
        extras = {
            "duration": duration,
            "variable_accuracy": var_report.accuracy,
            "variable_fid_test": var_report.fid_test,
        }
        points.append(PointResult(f"T = {duration}", fixed_report, extras))
    return SuiteResult("duration", points)
