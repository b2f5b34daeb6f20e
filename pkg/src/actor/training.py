"""Optimization loop: fixed-length training, variable-length finetuning, checkpoints.

Training is single-owner and fully seeded: model init, minibatch shuffling,
latent sampling and dropout all derive from `TrainConfig.seed`, so two runs
with the same seed produce identical weights and loss histories on the same
machine.

Checkpoints are self-describing ``.npz`` containers (format "actor-ckpt-v1")
holding the model and train configs, all weights, the step counter and the
RNG states, written atomically (temp file + rename).
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
import warnings
import zipfile
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .body import BodyModel, Motion, SkeletonBody
from .errors import (
    ActionSetMismatch,
    CorruptFile,
    DivergedLoss,
    IncompatibleCheckpoint,
    VersionMismatch,
)
from .losses import LossWeights, total_loss_batch
from .model import ModelConfig, MotionVAE, build_variant, motion_to_features

CHECKPOINT_FORMAT_VERSION = "actor-ckpt-v1"


@dataclass
class TrainConfig:
    """Optimization hyperparameters."""

    learning_rate: float = 1e-4
    batch_size: int = 20
    epochs: int = 500
    loss: LossWeights = field(default_factory=LossWeights)
    fixed_duration: int = 60
    variable_range: tuple[int, int] | None = None
    seed: int = 0
    checkpoint_every: int = 0          # epochs; 0 = only on demand
    grad_clip: float | None = None     # off unless set
    weight_decay: float = 1e-2

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if self.fixed_duration < 1:
            raise ValueError("fixed_duration must be >= 1")
        if self.variable_range is not None:
            lo, hi = (int(v) for v in self.variable_range)
            if not 1 <= lo <= hi:
                raise ValueError("variable_range must be (low, high) with 1 <= low <= high")
            self.variable_range = (lo, hi)


@dataclass
class MotionBatch:
    """Padded minibatch tensors. `lengths` counts the valid frames per item."""

    rot6d: Tensor     # (B, T, J, 6)
    trans: Tensor     # (B, T, 3)
    actions: Tensor   # (B,) long
    lengths: Tensor   # (B,) long

    @property
    def duration(self) -> int:
        return self.rot6d.shape[1]

    @property
    def valid_mask(self) -> Tensor:
        steps = torch.arange(self.duration, device=self.lengths.device)
        return steps[None, :] < self.lengths[:, None]

    @property
    def padding_mask(self) -> Tensor | None:
        mask = ~self.valid_mask
        return mask if bool(mask.any()) else None


def collate(motions: list[Motion], duration: int | None = None,
            starts: list[int] | None = None, dtype: torch.dtype = torch.float32) -> MotionBatch:
    """Stack motions into a padded batch.

    When `duration` is given, each motion is cropped to at most that many
    frames (from `starts[i]` when provided, else frame 0) and the batch is
    padded to exactly `duration`; otherwise the longest motion sets the width.
    """
    if duration is None:
        duration = max(len(m) for m in motions)
    b, j = len(motions), motions[0].num_joints
    rot6d = torch.zeros(b, duration, j, 6, dtype=dtype)
    rot6d[..., 0] = 1.0
    rot6d[..., 4] = 1.0  # identity-like padding keeps padded frames projectable
    trans = torch.zeros(b, duration, 3, dtype=dtype)
    actions = torch.zeros(b, dtype=torch.int64)
    lengths = torch.zeros(b, dtype=torch.int64)
    for i, motion in enumerate(motions):
        start = 0 if starts is None else int(starts[i])
        take = min(len(motion) - start, duration)
        rot6d[i, :take] = motion.rot6d[start : start + take].to(dtype)
        trans[i, :take] = motion.trans[start : start + take].to(dtype)
        actions[i] = motion.action
        lengths[i] = take
    return MotionBatch(rot6d, trans, actions, lengths)


def _check_action_set(model: MotionVAE, motions: list[Motion]) -> None:
    top = max(m.action for m in motions)
    if top >= model.config.num_actions:
        raise ActionSetMismatch(
            f"dataset uses action {top} but model supports {model.config.num_actions} actions"
        )


def _train_step(model: MotionVAE, batch: MotionBatch, weights: LossWeights,
                body: BodyModel, optimizer, eps_gen: torch.Generator,
                grad_clip: float | None):
    features = motion_to_features(batch.rot6d, batch.trans, model.config)
    valid = batch.valid_mask
    pred, mu, logvar, _ = model(
        features, batch.actions, padding_mask=batch.padding_mask,
        lengths=batch.lengths, generator=eps_gen,
    )
    total, terms = total_loss_batch(
        features, pred, mu, logvar, weights, body, model.config, valid=valid
    )
    optimizer.zero_grad()
    total.backward()
    if grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return {k: float(v.detach()) for k, v in terms.items()}


def _run_epochs(model, motions, config, body, epochs, start_step, sample_batch,
                checkpoint_dir=None, model_config=None, log=None):
    """Shared inner loop. `sample_batch` maps a list of indices to a MotionBatch."""
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    shuffle_rng = np.random.default_rng(config.seed + 1)
    eps_gen = torch.Generator().manual_seed(config.seed + 2)
    history = {"epochs": [], "step_totals": [], "batch_durations": []}
    step = start_step
    last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}

    model.train()
    n = len(motions)
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        epoch_terms: dict[str, float] = {}
        batches = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batch = sample_batch([int(i) for i in idx], shuffle_rng)
            terms = _train_step(model, batch, config.loss, body, optimizer, eps_gen,
                                config.grad_clip)
            if not np.isfinite(terms["total"]):
                raise DivergedLoss(
                    f"non-finite loss at step {step}", last_good_state=last_good, step=step
                )
            step += 1
            batches += 1
            history["step_totals"].append(terms["total"])
            history["batch_durations"].append(batch.duration)
            for k, v in terms.items():
                epoch_terms[k] = epoch_terms.get(k, 0.0) + v
        epoch_mean = {k: v / max(1, batches) for k, v in epoch_terms.items()}
        epoch_mean["epoch"] = epoch
        history["epochs"].append(epoch_mean)
        last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if log is not None:
            log(epoch_mean)
        if checkpoint_dir and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            ckpt = Checkpoint.from_model(model, model_config or model.config, config, step)
            save_checkpoint(ckpt, os.path.join(checkpoint_dir, f"epoch_{epoch + 1:05d}.npz"))
    model.eval()
    return history, step


def train(model: MotionVAE, motions: list[Motion], config: TrainConfig,
          body: BodyModel | None = None, checkpoint_dir=None, log=None):
    """Fixed-length training. Returns (Checkpoint, history).

    Each epoch shuffles the dataset into `batch_size` minibatches cropped to
    `fixed_duration` frames; the forward pass is encode -> sample -> decode;
    a non-finite loss aborts with DivergedLoss carrying the last epoch-end
    weights.
    """
    if config.variable_range is not None:
        raise ValueError("variable_range is only valid in finetune_variable")
    _check_action_set(model, motions)
    body = body or SkeletonBody()
    torch.manual_seed(config.seed)  # dropout stream

    short = [len(m) for m in motions if len(m) < config.fixed_duration]
    if short:
        raise ValueError(
            f"{len(short)} motions are shorter than fixed_duration={config.fixed_duration}"
        )

    def sample_batch(idx, _rng):
        return collate([motions[i] for i in idx], duration=config.fixed_duration)

    history, step = _run_epochs(
        model, motions, config, body, config.epochs, 0, sample_batch,
        checkpoint_dir=checkpoint_dir, log=log,
    )
    return Checkpoint.from_model(model, model.config, config, step), history


def finetune_variable(checkpoint: "Checkpoint", motions: list[Motion],
                      duration_range: tuple[int, int] = (60, 100), epochs: int = 100,
                      body: BodyModel | None = None, seed: int | None = None, log=None):
    """Variable-length finetuning from a fixed-duration checkpoint.

    Every minibatch samples one target duration uniformly from
    `duration_range`; motions longer than the target are randomly cropped,
    shorter ones padded and masked. Hyperparameters are inherited from the
    checkpoint's train config. Returns (Checkpoint, history).
    """
    if checkpoint.model_config.variant == "fully_connected":
        raise IncompatibleCheckpoint("fully connected variant cannot train variable lengths")
    if checkpoint.train_config is None:
        raise IncompatibleCheckpoint("checkpoint carries no train config to inherit")
    if checkpoint.step == 0:
        warnings.warn(
            "finetuning from an untrained checkpoint; variable-length training "
            "from scratch is known to converge poorly",
            stacklevel=2,
        )
    lo, hi = (int(v) for v in duration_range)
    if not 1 <= lo <= hi:
        raise ValueError("duration_range must be (low, high) with 1 <= low <= high")
    longest = max(len(m) for m in motions)
    if longest < hi:
        warnings.warn(
            f"no motion reaches {hi} frames (max {longest}); long batches will be padded",
            stacklevel=2,
        )

    model = checkpoint.build_model()
    _check_action_set(model, motions)
    body = body or SkeletonBody()
    config = dataclasses.replace(
        checkpoint.train_config,
        epochs=epochs,
        variable_range=None,
        seed=checkpoint.train_config.seed if seed is None else seed,
    )
    torch.manual_seed(config.seed + 3)

    def sample_batch(idx, rng):
        duration = int(rng.integers(lo, hi + 1))
        batch_motions = [motions[i] for i in idx]
        starts = [
            int(rng.integers(0, max(1, len(m) - duration + 1))) for m in batch_motions
        ]
        return collate(batch_motions, duration=duration, starts=starts)

    history, step = _run_epochs(
        model, motions, config, body, epochs, checkpoint.step, sample_batch, log=log
    )
    new_config = dataclasses.replace(config, variable_range=(lo, hi))
    return Checkpoint.from_model(model, model.config, new_config, step), history


# -- checkpoint container -----------------------------------------------------------


@dataclass
class Checkpoint:
    """Everything needed to rebuild a model and resume seeded work."""

    model_config: ModelConfig
    train_config: TrainConfig | None
    state: dict[str, np.ndarray]
    step: int
    rng: dict

    @classmethod
    def from_model(cls, model: MotionVAE, model_config: ModelConfig,
                   train_config: TrainConfig | None, step: int) -> "Checkpoint":
        state = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        rng = {"torch": torch.get_rng_state().numpy().copy()}
        return cls(model_config, train_config, state, step, rng)

    def build_model(self) -> MotionVAE:
        model = build_variant(self.model_config)
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.state.items()})
        model.eval()
        return model


def _config_to_json(model_config: ModelConfig, train_config: TrainConfig | None) -> str:
    payload = {"model": dataclasses.asdict(model_config)}
    if train_config is not None:
        payload["train"] = dataclasses.asdict(train_config)
    return json.dumps(payload, sort_keys=True)


def _config_from_json(blob: str) -> tuple[ModelConfig, TrainConfig | None]:
    payload = json.loads(blob)
    model_cfg = payload["model"]
    if model_cfg.get("action_names") is not None:
        model_cfg["action_names"] = tuple(model_cfg["action_names"])
    model_config = ModelConfig(**model_cfg)
    train_config = None
    if "train" in payload:
        train_cfg = dict(payload["train"])
        if train_cfg.get("variable_range") is not None:
            train_cfg["variable_range"] = tuple(train_cfg["variable_range"])
        train_config = TrainConfig(**train_cfg)
    return model_config, train_config


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    """Atomically write a checkpoint npz ("actor-ckpt-v1")."""
    arrays = {
        "format_version": np.str_(CHECKPOINT_FORMAT_VERSION),
        "config_json": np.str_(_config_to_json(checkpoint.model_config, checkpoint.train_config)),
        "step": np.int64(checkpoint.step),
    }
    for key, value in checkpoint.rng.items():
        arrays[f"rng/{key}"] = np.asarray(value)
    for name, value in checkpoint.state.items():
        arrays[f"param/{name}"] = value
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            np.savez(f, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, expect: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint, checking version and (optionally) the architecture."""
    try:
        with np.load(path, allow_pickle=False) as data:
            if "format_version" not in data:
                raise CorruptFile(f"{path}: missing format_version")
            version = str(data["format_version"])
            if version != CHECKPOINT_FORMAT_VERSION:
                raise VersionMismatch(
                    f"{path}: format_version {version!r}, expected {CHECKPOINT_FORMAT_VERSION!r}"
                )
            if "config_json" not in data or "step" not in data:
                raise CorruptFile(f"{path}: missing config or step")
            model_config, train_config = _config_from_json(str(data["config_json"]))
            step = int(data["step"])
            state = {
                k[len("param/"):]: np.asarray(data[k]) for k in data.files if k.startswith("param/")
            }
            rng = {k[len("rng/"):]: np.asarray(data[k]) for k in data.files if k.startswith("rng/")}
    except (VersionMismatch, CorruptFile):
        raise
    except (OSError, ValueError, KeyError, json.JSONDecodeError, zipfile.BadZipFile) as exc:
        raise CorruptFile(f"{path}: unreadable checkpoint ({exc})") from exc
    checkpoint = Checkpoint(model_config, train_config, state, step, rng)
    if expect is not None and dataclasses.asdict(expect) != dataclasses.asdict(model_config):
        raise IncompatibleCheckpoint(
            f"{path}: checkpoint architecture differs from the requested config"
        )
    return checkpoint
