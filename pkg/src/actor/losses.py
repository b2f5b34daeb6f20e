"""Training objectives: coordinate reconstruction, geometry reconstruction, KL.

Reductions follow one convention everywhere: squared L2 summed over
coordinates, summed (or averaged, see `LossWeights.time_reduction`) over
valid frames, and averaged over the batch. The KL term is summed over latent
dimensions and averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .body import BodyModel, Motion, SkeletonBody
from .errors import LengthMismatch
from .model import ModelConfig, rep_to_matrix, split_features
from . import rotations


@dataclass
class LossWeights:
    """Which reconstruction terms are active, and the KL weight.

    Enabled reconstruction terms are equally weighted (coefficient 1); the KL
    term is scaled by `lambda_kl`. The joint term is off by default and only
    used in ablations.
    """

    lambda_kl: float = 1e-5
    use_rotations: bool = True
    use_translation: bool = True
    use_vertices: bool = True
    use_joints: bool = False
    time_reduction: str = "sum"  # "sum" | "mean" over the frame axis

    def __post_init__(self):
        if self.lambda_kl < 0:
            raise ValueError("lambda_kl must be >= 0")
        if self.time_reduction not in ("sum", "mean"):
            raise ValueError("time_reduction must be 'sum' or 'mean'")
        if not (self.use_rotations or self.use_translation or self.use_vertices or self.use_joints):
            raise ValueError("at least one reconstruction term must be enabled")


def kl_loss(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, diag(exp(logvar))) || N(0, I)).

    0.5 * sum_i(exp(logvar_i) + mu_i^2 - 1 - logvar_i), summed over the
    latent axis and averaged over any batch axes. Always >= 0.
    """
    per = 0.5 * (torch.exp(logvar) + mu * mu - 1.0 - logvar).sum(dim=-1)
    return per.mean() if per.ndim else per


def squared_frame_error(gt: Tensor, pred: Tensor) -> Tensor:
    """(B, T, ...) pair -> per-frame squared L2 over all trailing dims, (B, T)."""
    diff = (gt - pred) ** 2
    return diff.reshape(diff.shape[0], diff.shape[1], -1).sum(dim=-1)


def reduce_frames(per_frame: Tensor, valid: Tensor | None, time_reduction: str) -> Tensor:
    """(B, T) per-frame error -> scalar: sum/mean over valid frames, mean over batch."""
    if valid is not None:
        per_frame = per_frame * valid.to(per_frame.dtype)
    total = per_frame.sum(dim=1)
    if time_reduction == "mean":
        count = valid.sum(dim=1).to(per_frame.dtype) if valid is not None \
            else torch.full_like(total, per_frame.shape[1])
        total = total / count.clamp(min=1.0)
    return total.mean()


def total_loss_batch(
    gt_features: Tensor,
    pred_features: Tensor,
    mu: Tensor,
    logvar: Tensor,
    weights: LossWeights,
    body: BodyModel,
    config: ModelConfig,
    valid: Tensor | None = None,
) -> tuple[Tensor, dict[str, Tensor]]:
    """Weighted total over a (B, T, pose_dim) batch, with a per-term breakdown.

    `valid` is the (B, T) bool mask of real (non-padded) frames. The breakdown
    holds the raw value of every enabled term plus `kl_weighted`; the enabled
    reconstruction terms and `kl_weighted` sum to `total`.
    """
    if gt_features.shape != pred_features.shape:
        raise LengthMismatch(
            f"shape mismatch: {tuple(gt_features.shape)} vs {tuple(pred_features.shape)}"
        )
    gt_rot, gt_trans = split_features(gt_features, config)
    pred_rot, pred_trans = split_features(pred_features, config)
    tr = weights.time_reduction
    terms: dict[str, Tensor] = {}

    if weights.use_rotations:
        terms["rotation"] = reduce_frames(squared_frame_error(gt_rot, pred_rot), valid, tr)
    if weights.use_translation and config.use_translation:
        terms["translation"] = reduce_frames(squared_frame_error(gt_trans, pred_trans), valid, tr)
    if weights.use_vertices or weights.use_joints:
        gt_m = rep_to_matrix(gt_rot, config.rotation_dim)
        pred_m = rep_to_matrix(pred_rot, config.rotation_dim)
        if weights.use_vertices:
            err = squared_frame_error(body.surface(gt_m), body.surface(pred_m))
            terms["vertex"] = reduce_frames(err, valid, tr)
        if weights.use_joints:
            err = squared_frame_error(body.joint_positions(gt_m), body.joint_positions(pred_m))
            terms["joint"] = reduce_frames(err, valid, tr)

    kl = kl_loss(mu, logvar)
    total = sum(terms.values()) + weights.lambda_kl * kl
    terms["kl"] = kl
    terms["kl_weighted"] = weights.lambda_kl * kl
    terms["total"] = total
    return total, terms


# -- single-motion contract surface ------------------------------------------------


def _check_pair(gt: Motion, pred: Motion) -> None:
    if len(gt) != len(pred):
        raise LengthMismatch(f"length mismatch: {len(gt)} vs {len(pred)}")
    if gt.num_joints != pred.num_joints:
        raise LengthMismatch(f"joint count mismatch: {gt.num_joints} vs {pred.num_joints}")


def loss_pose(gt: Motion, pred: Motion, include_translation: bool = True,
              time_reduction: str = "sum") -> float:
    """Squared L2 over 6D rotation coords (and displacement, if included),
    reduced over frames."""
    _check_pair(gt, pred)
    err = ((gt.rot6d - pred.rot6d) ** 2).sum(dim=(1, 2))
    if include_translation:
        err = err + ((gt.trans - pred.trans) ** 2).sum(dim=1)
    return float(err.mean() if time_reduction == "mean" else err.sum())


def loss_vertices(gt: Motion, pred: Motion, body: BodyModel | None = None,
                  time_reduction: str = "sum") -> float:
    """Squared L2 between root-centered surface clouds of both motions."""
    _check_pair(gt, pred)
    body = body or SkeletonBody()
    gt_cloud = body.surface(rotations.sixd_to_matrix(gt.rot6d))
    pred_cloud = body.surface(rotations.sixd_to_matrix(pred.rot6d))
    err = ((gt_cloud - pred_cloud) ** 2).sum(dim=(1, 2))
    return float(err.mean() if time_reduction == "mean" else err.sum())


def loss_joints(gt: Motion, pred: Motion, body: BodyModel | None = None,
                time_reduction: str = "sum") -> float:
    """As loss_vertices but on root-centered joint positions (ablation term)."""
    _check_pair(gt, pred)
    body = body or SkeletonBody()
    gt_pos = body.joint_positions(rotations.sixd_to_matrix(gt.rot6d))
    pred_pos = body.joint_positions(rotations.sixd_to_matrix(pred.rot6d))
    err = ((gt_pos - pred_pos) ** 2).sum(dim=(1, 2))
    return float(err.mean() if time_reduction == "mean" else err.sum())


def total_loss(
    gt: Motion,
    pred: Motion,
    mu: Tensor,
    logvar: Tensor,
    weights: LossWeights | None = None,
    body: BodyModel | None = None,
) -> tuple[float, dict[str, float]]:
    """Single-motion total loss with a per-term breakdown.

    The enabled reconstruction terms plus `kl_weighted` sum to `total`
    (within float error).
    """
    weights = weights or LossWeights()
    body = body or SkeletonBody()
    terms: dict[str, float] = {}
    if weights.use_rotations:
        terms["rotation"] = loss_pose(gt, pred, include_translation=False,
                                      time_reduction=weights.time_reduction)
    if weights.use_translation:
        err = ((gt.trans - pred.trans) ** 2).sum(dim=1)
        terms["translation"] = float(err.mean() if weights.time_reduction == "mean" else err.sum())
    if weights.use_vertices:
        terms["vertex"] = loss_vertices(gt, pred, body, weights.time_reduction)
    if weights.use_joints:
        terms["joint"] = loss_joints(gt, pred, body, weights.time_reduction)
    kl = float(kl_loss(mu, logvar))
    total = sum(terms.values()) + weights.lambda_kl * kl
    terms["kl"] = kl
    terms["kl_weighted"] = weights.lambda_kl * kl
    terms["total"] = total
    return total, terms
