"""Static trajectory plots: a horizontal strip of stick figures over time."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch

from .body import Motion, Skeleton, default_skeleton, forward_kinematics


def plot_motion_strip(motion: Motion, path, frames: int = 10,
                      skeleton: Skeleton | None = None) -> None:
    """Render `frames` equally spaced poses side by side and save a PNG.

    Front view (x up the strip height, y vertical); the root displacement is
    applied so trajectory semantics stay visible.
    """
    skeleton = skeleton or default_skeleton()
    positions = forward_kinematics(
        skeleton, motion.rot6d.to(torch.float64), motion.trans.to(torch.float64)
    ).numpy()
    t = len(motion)
    frames = min(frames, t)
    picks = np.linspace(0, t - 1, frames).round().astype(int)
    spacing = 1.2

    fig, ax = plt.subplots(figsize=(1.2 * frames, 3.2))
    cmap = plt.get_cmap("viridis")
    for k, idx in enumerate(picks):
        pose = positions[idx]
        color = cmap(k / max(1, frames - 1))
        offset = k * spacing
        for j in range(1, skeleton.joint_count):
            parent = int(skeleton.parents[j])
            ax.plot(
                [pose[parent, 0] + offset, pose[j, 0] + offset],
                [pose[parent, 1], pose[j, 1]],
                color=color, linewidth=1.5,
            )
        ax.scatter(pose[:, 0] + offset, pose[:, 1], s=4, color=color)
        ax.text(offset, -0.15, f"t={idx}", ha="center", fontsize=7)
    ax.set_aspect("equal")
    ax.set_axis_off()
    ax.set_title(f"action {motion.action}, {t} frames @ {motion.fps:g} fps", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
