"""Rigid articulated body model: skeleton, forward kinematics, surface points.

This is the geometry backend for every position-space loss and metric. The
skeleton is a rooted tree of joints with fixed rest offsets; per-frame joint
rotations (6D) drive forward kinematics differentiably. Surface points are
fixed local offsets rigidly attached to each bone, standing in for a mesh.

Conventions: vertical axis +y, facing axis +z, units meters. Joint 0 is the
root; its rotation is the global body orientation and its position the root
displacement.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np
import torch
import yaml
from torch import Tensor

from . import rotations
from .errors import ShapeMismatch


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Immutable skeleton definition.

    parents[0] must be -1 and every other joint's parent must precede it,
    so the joint order is already topological.
    """

    names: tuple[str, ...]
    parents: np.ndarray                       # (J,) int
    rest_offsets: np.ndarray                  # (J, 3) float, meters
    surface_offsets: tuple[np.ndarray, ...]   # per joint (S_j, 3) local offsets

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        offsets = np.asarray(self.rest_offsets, dtype=np.float64)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "rest_offsets", offsets)
        object.__setattr__(
            self,
            "surface_offsets",
            tuple(np.asarray(s, dtype=np.float64).reshape(-1, 3) for s in self.surface_offsets),
        )
        j = len(self.names)
        if parents.shape != (j,) or offsets.shape != (j, 3):
            raise ValueError("names, parents and rest_offsets must agree on joint count")
        if j < 1 or parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        if any(not (0 <= parents[i] < i) for i in range(1, j)):
            raise ValueError("parents must reference earlier joints (rooted, acyclic)")
        if not np.isfinite(offsets).all():
            raise ValueError("rest offsets must be finite")
        if len(self.surface_offsets) != j:
            raise ValueError("one surface offset list per joint required")
        if self.surface_point_count < j:
            raise ValueError("need at least one surface point per joint on average")

    @property
    def joint_count(self) -> int:
        return len(self.names)

    @property
    def surface_point_count(self) -> int:
        return int(sum(s.shape[0] for s in self.surface_offsets))

    @property
    def surface_joint_index(self) -> np.ndarray:
        """(P,) joint index owning each flattened surface point."""
        return np.repeat(np.arange(self.joint_count), [s.shape[0] for s in self.surface_offsets])

    def flat_surface_offsets(self) -> np.ndarray:
        """(P, 3) all surface offsets concatenated in joint order."""
        return np.concatenate(self.surface_offsets, axis=0)


@dataclass
class FramePose:
    """One frame: per-joint 6D rotations plus a root displacement."""

    rotations: Tensor      # (J, 6)
    displacement: Tensor   # (3,)

    def __post_init__(self):
        self.rotations = torch.as_tensor(self.rotations)
        self.displacement = torch.as_tensor(self.displacement, dtype=self.rotations.dtype)
        if self.rotations.ndim != 2 or self.rotations.shape[-1] != 6:
            raise ShapeMismatch(f"rotations must be (J, 6), got {tuple(self.rotations.shape)}")
        if self.displacement.shape != (3,):
            raise ShapeMismatch("displacement must be a 3-vector")


@dataclass
class Motion:
    """A labeled variable-length motion: (T, J, 6) rotations + (T, 3) displacements."""

    rot6d: Tensor
    trans: Tensor
    action: int
    fps: float = 20.0

    def __post_init__(self):
        self.rot6d = torch.as_tensor(self.rot6d)
        self.trans = torch.as_tensor(self.trans, dtype=self.rot6d.dtype)
        if self.rot6d.ndim != 3 or self.rot6d.shape[-1] != 6:
            raise ShapeMismatch(f"rot6d must be (T, J, 6), got {tuple(self.rot6d.shape)}")
        if self.trans.shape != (self.rot6d.shape[0], 3):
            raise ShapeMismatch(f"trans must be (T, 3), got {tuple(self.trans.shape)}")
        if len(self) < 1:
            raise ShapeMismatch("motion must have at least one frame")
        if not bool(torch.isfinite(self.rot6d).all()) or not bool(torch.isfinite(self.trans).all()):
            raise ValueError("motion contains non-finite values")
        if self.action < 0:
            raise ValueError("action label must be non-negative")

    def __len__(self) -> int:
        return self.rot6d.shape[0]

    @property
    def num_joints(self) -> int:
        return self.rot6d.shape[1]

    def frame(self, t: int) -> FramePose:
        return FramePose(self.rot6d[t], self.trans[t])

    def clone(self) -> "Motion":
        return Motion(self.rot6d.clone(), self.trans.clone(), self.action, self.fps)


# -- forward kinematics -------------------------------------------------------


def _offsets_tensor(skeleton: Skeleton, like: Tensor) -> Tensor:
    return torch.as_tensor(skeleton.rest_offsets, dtype=like.dtype, device=like.device)


def fk_from_matrices(
    skeleton: Skeleton, rotmats: Tensor, displacement: Tensor | None = None
) -> tuple[Tensor, Tensor]:
    """Core FK: (..., J, 3, 3) local rotations -> (positions, global rotations).

    positions[j] = positions[parent] + global[parent] @ rest_offset[j];
    global[j] = global[parent] @ local[j]. The root sits at `displacement`
    (or the origin) and its local rotation is the global body orientation.
    """
    j = skeleton.joint_count
    if rotmats.shape[-3] != j:
        raise ShapeMismatch(f"pose has {rotmats.shape[-3]} joints, skeleton has {j}")
    offsets = _offsets_tensor(skeleton, rotmats)
    batch = rotmats.shape[:-3]
    if displacement is None:
        root_pos = torch.zeros(*batch, 3, dtype=rotmats.dtype, device=rotmats.device)
    else:
        root_pos = displacement.expand(*batch, 3)

    positions = [root_pos]
    globals_ = [rotmats[..., 0, :, :]]
    for i in range(1, j):
        parent = int(skeleton.parents[i])
        positions.append(positions[parent] + globals_[parent] @ offsets[i])
        globals_.append(globals_[parent] @ rotmats[..., i, :, :])
    return torch.stack(positions, dim=-2), torch.stack(globals_, dim=-3)


def forward_kinematics(
    skeleton: Skeleton, rotations6d: Tensor, displacement: Tensor | None = None
) -> Tensor:
    """Joint positions (..., J, 3) from 6D rotations (..., J, 6).

    The root is placed at `displacement` when given, else at the origin.
    """
    mats = rotations.sixd_to_matrix(rotations6d)
    positions, _ = fk_from_matrices(skeleton, mats, displacement)
    return positions


def surface_points_from_matrices(skeleton: Skeleton, rotmats: Tensor) -> Tensor:
    """Root-centered surface cloud (..., P, 3) from local rotation matrices."""
    positions, globals_ = fk_from_matrices(skeleton, rotmats, displacement=None)
    joint_index = skeleton.surface_joint_index
    offsets = torch.as_tensor(skeleton.flat_surface_offsets(), dtype=rotmats.dtype, device=rotmats.device)
    rot = globals_[..., joint_index, :, :]                    # (..., P, 3, 3)
    pts = positions[..., joint_index, :] + (rot @ offsets[..., None]).squeeze(-1)
    return pts - positions[..., 0:1, :]


def surface_points(skeleton: Skeleton, rotations6d: Tensor) -> Tensor:
    """Root-centered surface cloud (..., P, 3) from 6D rotations (..., J, 6)."""
    mats = rotations.sixd_to_matrix(rotations6d)
    return surface_points_from_matrices(skeleton, mats)


def root_center(cloud: Tensor) -> Tensor:
    """Subtract the root position (index 0 along the point axis) per frame."""
    return cloud - cloud[..., 0:1, :]


def canonicalize_frontal(motion: Motion) -> Motion:
    """Rotate a motion about +y so that frame 1 faces +z.

    The correction is a single global rotation applied to every frame's root
    rotation and displacement; relative motion is untouched. If the first
    frame's facing direction has no horizontal component, the motion is
    returned unchanged (as a copy).
    """
    out = motion.clone()
    root0 = rotations.sixd_to_matrix(motion.rot6d[0, 0].to(torch.float64))
    facing = root0 @ torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
    horiz = torch.sqrt(facing[0] ** 2 + facing[2] ** 2)
    if float(horiz) < 1e-6:
        return out
    yaw = torch.atan2(facing[0], facing[2])
    correction = rotations.axis_angle_to_matrix(
        torch.tensor([0.0, -float(yaw), 0.0], dtype=torch.float64)
    ).to(motion.rot6d.dtype)

    root_mats = rotations.sixd_to_matrix(motion.rot6d[:, 0])
    out.rot6d[:, 0] = rotations.matrix_to_sixd(correction @ root_mats, check=False)
    out.trans = motion.trans @ correction.T
    return out


# -- pluggable body model ------------------------------------------------------


class BodyModel(abc.ABC):
    """Maps per-frame rotations to 3D geometry.

    The built-in implementation is a rigid skeleton; a learned mesh model can
    be plugged in by implementing the same surface.
    """

    @property
    @abc.abstractmethod
    def joint_count(self) -> int: ...

    @property
    @abc.abstractmethod
    def surface_point_count(self) -> int: ...

    @abc.abstractmethod
    def joint_positions(self, rotmats: Tensor, displacement: Tensor | None = None) -> Tensor:
        """(..., J, 3, 3) local rotation matrices -> joint positions (..., J, 3)."""

    @abc.abstractmethod
    def surface(self, rotmats: Tensor) -> Tensor:
        """(..., J, 3, 3) local rotation matrices -> root-centered cloud (..., P, 3)."""


@dataclass(frozen=True, eq=False)
class SkeletonBody(BodyModel):
    """Rigid-skeleton body model backed by forward kinematics."""

    skeleton: Skeleton = field(default_factory=lambda: default_skeleton())

    @property
    def joint_count(self) -> int:
        return self.skeleton.joint_count

    @property
    def surface_point_count(self) -> int:
        return self.skeleton.surface_point_count

    def joint_positions(self, rotmats: Tensor, displacement: Tensor | None = None) -> Tensor:
        positions, _ = fk_from_matrices(self.skeleton, rotmats, displacement)
        return positions

    def surface(self, rotmats: Tensor) -> Tensor:
        return surface_points_from_matrices(self.skeleton, rotmats)


# -- skeleton construction ------------------------------------------------------

# 24-joint humanoid with the usual pelvis-rooted topology. Offsets are
# hand-authored for a ~1.7 m figure standing on y = 0 facing +z.
_DEFAULT_SKELETON = [
    # name, parent, offset (x, y, z)
    ("pelvis", None, (0.0, 0.95, 0.0)),
    ("left_hip", "pelvis", (0.09, -0.06, 0.0)),
    ("right_hip", "pelvis", (-0.09, -0.06, 0.0)),
    ("spine1", "pelvis", (0.0, 0.11, 0.0)),
    ("left_knee", "left_hip", (0.0, -0.40, 0.0)),
    ("right_knee", "right_hip", (0.0, -0.40, 0.0)),
    ("spine2", "spine1", (0.0, 0.12, 0.0)),
    ("left_ankle", "left_knee", (0.0, -0.42, 0.0)),
    ("right_ankle", "right_knee", (0.0, -0.42, 0.0)),
    ("spine3", "spine2", (0.0, 0.06, 0.0)),
    ("left_foot", "left_ankle", (0.0, -0.06, 0.13)),
    ("right_foot", "right_ankle", (0.0, -0.06, 0.13)),
    ("neck", "spine3", (0.0, 0.22, 0.0)),
    ("left_collar", "spine3", (0.07, 0.12, 0.0)),
    ("right_collar", "spine3", (-0.07, 0.12, 0.0)),
    ("head", "neck", (0.0, 0.17, 0.0)),
    ("left_shoulder", "left_collar", (0.11, 0.0, 0.0)),
    ("right_shoulder", "right_collar", (-0.11, 0.0, 0.0)),
    ("left_elbow", "left_shoulder", (0.26, 0.0, 0.0)),
    ("right_elbow", "right_shoulder", (-0.26, 0.0, 0.0)),
    ("left_wrist", "left_elbow", (0.25, 0.0, 0.0)),
    ("right_wrist", "right_elbow", (-0.25, 0.0, 0.0)),
    ("left_hand", "left_wrist", (0.08, 0.0, 0.0)),
    ("right_hand", "right_wrist", (-0.08, 0.0, 0.0)),
]

SURFACE_BOX_RADIUS = 0.05


def _box_corners(radius: float) -> np.ndarray:
    corners = [
        (sx * radius, sy * radius, sz * radius)
        for sx in (-1.0, 1.0)
        for sy in (-1.0, 1.0)
        for sz in (-1.0, 1.0)
    ]
    return np.asarray(corners, dtype=np.float64)


def build_skeleton(entries, surface_radius: float = SURFACE_BOX_RADIUS) -> Skeleton:
    """Construct a skeleton from (name, parent-name-or-None, offset) rows.

    Every bone gets the 8 corners of a box of half-width `surface_radius`
    as rigidly attached surface points.
    """
    names = [e[0] for e in entries]
    index = {n: i for i, n in enumerate(names)}
    parents = np.asarray([-1 if e[1] is None else index[e[1]] for e in entries], dtype=np.int64)
    offsets = np.asarray([e[2] for e in entries], dtype=np.float64)
    box = _box_corners(surface_radius)
    return Skeleton(tuple(names), parents, offsets, tuple(box.copy() for _ in names))


def default_skeleton() -> Skeleton:
    """The built-in 24-joint humanoid (192 surface points)."""
    return build_skeleton(_DEFAULT_SKELETON)


def chain_skeleton(num_joints: int, offset=(0.0, 1.0, 0.0)) -> Skeleton:
    """A serial chain of `num_joints` joints, each offset by `offset`. Test helper."""
    entries = [("joint0", None, (0.0, 0.0, 0.0))]
    for i in range(1, num_joints):
        entries.append((f"joint{i}", f"joint{i - 1}", tuple(offset)))
    return build_skeleton(entries)


def load_skeleton(path) -> Skeleton:
    """Load a skeleton from a YAML config.

    Expected layout::

        joints:
          - {name: pelvis, parent: null, offset: [0, 0.95, 0]}
          - {name: left_hip, parent: pelvis, offset: [0.09, -0.06, 0],
             surface_offsets: [[0.05, 0, 0], ...]}   # optional, default box
        surface_radius: 0.05                          # optional
    """
    with open(path) as f:
        raw = yaml.safe_load(f)
    radius = float(raw.get("surface_radius", SURFACE_BOX_RADIUS))
    entries = []
    explicit_surface = {}
    for row in raw["joints"]:
        entries.append((row["name"], row.get("parent"), tuple(float(v) for v in row["offset"])))
        if "surface_offsets" in row:
            explicit_surface[row["name"]] = np.asarray(row["surface_offsets"], dtype=np.float64)
    skeleton = build_skeleton(entries, surface_radius=radius)
    if explicit_surface:
        surface = tuple(
            explicit_surface.get(name, skeleton.surface_offsets[i])
            for i, name in enumerate(skeleton.names)
        )
        skeleton = Skeleton(skeleton.names, skeleton.parents, skeleton.rest_offsets, surface)
    return skeleton
