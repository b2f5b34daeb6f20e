"""Use cases built on a trained model: denoising, interpolation, augmentation.

Denoising is encode-decode through the posterior mean (no sampling), so it
is deterministic. Latent interpolation mixes the encoder means of two
same-action motions. Augmentation trains the recognition model on various
mixtures of real, generated and interpolated motions and scores them on the
real test split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import rotations
from .body import BodyModel, Motion, SkeletonBody
from .errors import ActionMismatch, AlphaOutOfRange, InsufficientData, TooShort
from .evaluation import FEATURE_DIM, MotionRecognizer, accuracy
from .model import MotionVAE
from .training import collate

MIXES = ("real_only", "gen_only", "interp_only", "real_plus_gen")


def denoise(model: MotionVAE, motion: Motion, action: int | None = None) -> Motion:
    """Encode-decode a motion through the posterior mean.

    The action label must be known (defaults to the motion's own). Output
    length equals input length; the result is deterministic.
    """
    action = motion.action if action is None else action
    mu, _ = model.encode(motion, action)
    out = model.decode(mu, action, len(motion), fps=motion.fps)
    return out


def jitter_score(motion: Motion, body: BodyModel | None = None) -> float:
    """Mean squared second difference of joint positions over time (m^2/frame^2).

    Zero for any constant or linearly translating trajectory; grows with
    frame-to-frame jerkiness. Requires at least 3 frames.
    """
    if len(motion) < 3:
        raise TooShort(f"need >= 3 frames for a second difference, got {len(motion)}")
    body = body or SkeletonBody()
    mats = rotations.sixd_to_matrix(motion.rot6d.to(torch.float64))
    pos = body.joint_positions(mats, motion.trans.to(torch.float64))
    second = pos[2:] - 2.0 * pos[1:-1] + pos[:-2]
    return float((second**2).mean())


def interpolate_latent(model: MotionVAE, m1: Motion, m2: Motion, action: int,
                       alpha: float) -> Motion:
    """Decode (1 - alpha) * mu_1 + alpha * mu_2 with m1's duration.

    Both motions must carry `action`. Note the duration always comes from
    m1, including at alpha = 1.
    """
    if not (m1.action == m2.action == action):
        raise ActionMismatch(
            f"actions differ: {m1.action}, {m2.action}, requested {action}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must be in [0, 1], got {alpha}")
    mu1, _ = model.encode(m1, action)
    mu2, _ = model.encode(m2, action)
    z = (1.0 - alpha) * mu1 + alpha * mu2
    return model.decode(z, action, len(m1), fps=m1.fps)


# -- augmentation harness ----------------------------------------------------------


def _subset_fraction(motions: list[Motion], fraction: float,
                     rng: np.random.Generator) -> list[Motion]:
    """Class-stratified random subset keeping `fraction` of each action."""
    by_action: dict[int, list[Motion]] = {}
    for m in motions:
        by_action.setdefault(m.action, []).append(m)
    subset = []
    for _, group in sorted(by_action.items()):
        keep = max(1, round(fraction * len(group)))
        idx = rng.permutation(len(group))[:keep]
        subset.extend(group[int(i)] for i in idx)
    return subset


def _generated_set(model: MotionVAE, count: int, duration: int,
                   gen: torch.Generator) -> list[Motion]:
    """`count` motions with balanced action labels."""
    actions = np.arange(count) % model.config.num_actions
    return [model.generate(int(a), duration, generator=gen) for a in actions]


def _interpolated_set(model: MotionVAE, real: list[Motion], count: int,
                      rng: np.random.Generator) -> list[Motion]:
    """Within-class latent interpolations of random real pairs, balanced."""
    by_action: dict[int, list[Motion]] = {}
    for m in real:
        by_action.setdefault(m.action, []).append(m)
    labels = sorted(by_action)
    out = []
    for k in range(count):
        action = labels[k % len(labels)]
        group = by_action[action]
        i, j = rng.integers(0, len(group), size=2)
        alpha = float(rng.uniform(0.0, 1.0))
        out.append(interpolate_latent(model, group[int(i)], group[int(j)], action, alpha))
    return out


def _train_recognizer_mixed(
    real: list[Motion],
    model: MotionVAE | None,
    num_actions: int,
    epochs: int,
    batch_size: int,
    seed: int,
    duration: int,
    mix_generated: bool,
) -> MotionRecognizer:
    """Recognizer training where each minibatch is half real, half freshly
    generated with balanced action labels (when `mix_generated`)."""
    present = sorted({m.action for m in real})
    if len(present) < 2:
        raise InsufficientData(f"need >= 2 classes, got labels {present}")
    torch.manual_seed(seed)
    recognizer = MotionRecognizer(num_actions, real[0].num_joints, hidden=FEATURE_DIM)
    optimizer = torch.optim.Adam(recognizer.parameters(), lr=1e-3)
    loss_fn = nn.CrossEntropyLoss()
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)

    half = batch_size // 2 if mix_generated else batch_size
    recognizer.train()
    for _ in range(epochs):
        order = rng.permutation(len(real))
        for lo in range(0, len(real), half):
            chunk = [real[int(i)] for i in order[lo : lo + half]]
            if mix_generated:
                chunk = chunk + _generated_set(model, len(chunk), duration, gen)
            batch = collate(chunk)
            logits, _ = recognizer(batch.rot6d, batch.trans, batch.lengths)
            loss = loss_fn(logits, torch.tensor([m.action for m in chunk]))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    recognizer.eval()
    return recognizer


def augment_train_classifier(
    real_train: list[Motion],
    real_test: list[Motion],
    model: MotionVAE,
    mix: str = "real_plus_gen",
    fraction: float = 1.0,
    epochs: int = 30,
    batch_size: int = 32,
    seed: int = 0,
    duration: int = 60,
) -> tuple[MotionRecognizer, dict]:
    """Train the recognition model on the chosen data mixture.

    Mixtures: real_only (a class-stratified `fraction` of the real train
    split), gen_only (same count, freshly generated), interp_only (same
    count, within-class latent interpolations), real_plus_gen (each
    minibatch half real, half freshly generated). Returns the recognizer and
    a summary with accuracy on the real test split.
    """
    if mix not in MIXES:
        raise ValueError(f"mix must be one of {MIXES}")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    real_subset = _subset_fraction(real_train, fraction, rng)
    num_actions = model.config.num_actions

    if mix == "real_plus_gen":
        recognizer = _train_recognizer_mixed(
            real_subset, model, num_actions, epochs, batch_size, seed, duration,
            mix_generated=True,
        )
    else:
        if mix == "real_only":
            train_set = real_subset
        elif mix == "gen_only":
            gen = torch.Generator().manual_seed(seed)
            train_set = _generated_set(model, len(real_subset), duration, gen)
        else:
            train_set = _interpolated_set(model, real_subset, len(real_subset), rng)
        recognizer = _train_recognizer_mixed(
            train_set, None, num_actions, epochs, batch_size, seed, duration,
            mix_generated=False,
        )
    summary = {
        "mix": mix,
        "fraction": fraction,
        "train_size": len(real_subset),
        "accuracy_real_test": accuracy(recognizer, real_test),
    }
    return recognizer, summary


@dataclass
class TransferTable:
    """Train-set rows x test-set columns of recognition accuracies."""

    rows: dict[str, dict[str, float]]
    note: str = ""
    columns: tuple[str, ...] = ("Real_orig", "Real_denoised")

    def format(self) -> str:
        width = max(len(name) for name in self.rows)
        header = " " * width + "  " + "  ".join(f"{c:>14}" for c in self.columns)
        lines = [header, "-" * len(header)]
        for name, cells in self.rows.items():
            lines.append(
                name.ljust(width) + "  " +
                "  ".join(f"{cells[c]:>14.1f}" for c in self.columns)
            )
        if self.note:
            lines.append("")
            lines.append(f"note: {self.note}")
        return "\n".join(lines)


def recognition_transfer_table(
    real_train: list[Motion],
    real_test: list[Motion],
    model: MotionVAE,
    epochs: int = 30,
    batch_size: int = 32,
    seed: int = 0,
    duration: int = 60,
) -> TransferTable:
    """Accuracy matrix over {orig, denoised, interpolated, generated, mixed}
    train sets and {orig, denoised} test sets.

    Denoised sets use the true action label at denoising time, so the
    denoised-test column is a consistency probe, not a benchmark number.
    """
    rng = np.random.default_rng(seed)
    denoised_train = [denoise(model, m) for m in real_train]
    denoised_test = [denoise(model, m) for m in real_test]
    gen = torch.Generator().manual_seed(seed)
    generated = _generated_set(model, len(real_train), duration, gen)
    interpolated = _interpolated_set(model, real_train, len(real_train), rng)
    num_actions = model.config.num_actions

    def fit(train_set, mix_generated=False):
        return _train_recognizer_mixed(
            train_set, model if mix_generated else None, num_actions, epochs,
            batch_size, seed, duration, mix_generated=mix_generated,
        )

    recognizers = {
        "Real_orig": fit(real_train),
        "Real_denoised": fit(denoised_train),
        "Real_interpolated": fit(interpolated),
        "Generated": fit(generated),
        "Real_orig + Generated": fit(real_train, mix_generated=True),
    }
    rows = {
        name: {
            "Real_orig": accuracy(rec, real_test),
            "Real_denoised": accuracy(rec, denoised_test),
        }
        for name, rec in recognizers.items()
    }
    return TransferTable(
        rows,
        note=(
            "denoised sets use the ground-truth action label at denoising time; "
            "the denoised-test column is not a benchmark improvement"
        ),
    )


def lowdata_sweep(
    real_train: list[Motion],
    real_test: list[Motion],
    model: MotionVAE,
    fractions=(0.1, 0.25, 0.5, 1.0),
    epochs: int = 30,
    seed: int = 0,
    duration: int = 60,
) -> dict[float, dict[str, float]]:
    """Real-only vs real-plus-generated accuracy at several training fractions."""
    out: dict[float, dict[str, float]] = {}
    for fraction in fractions:
        _, real_only = augment_train_classifier(
            real_train, real_test, model, "real_only", fraction, epochs=epochs,
            seed=seed, duration=duration,
        )
        _, mixed = augment_train_classifier(
            real_train, real_test, model, "real_plus_gen", fraction, epochs=epochs,
            seed=seed, duration=duration,
        )
        out[fraction] = {
            "real_only": real_only["accuracy_real_test"],
            "real_plus_gen": mixed["accuracy_real_test"],
        }
    return out
