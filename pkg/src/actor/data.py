"""Procedural synthetic action dataset, noise injection, and motion file I/O.

Five built-in action generators produce closed-form sinusoidal joint-angle
trajectories on the default 24-joint skeleton, with per-sequence random
amplitude / speed / phase for intra-class variety. Three of them move the
root (vertical drop, vertical bounce, forward drift) so the displacement
channel carries real signal.

Files: a motion is one ``.npz`` with keys rot6d / trans / action / fps and
format version "motion-v1"; a dataset is a directory of motion files plus a
JSON manifest listing files, action names and split assignment.
"""

from __future__ import annotations

import json
import os
import zipfile
from dataclasses import dataclass, field

import numpy as np
import torch

from . import rotations
from .body import Motion, default_skeleton, forward_kinematics
from .errors import CorruptFile, InvalidSpec, VersionMismatch

MOTION_FORMAT_VERSION = "motion-v1"
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT_VERSION = "motion-dataset-v1"

# joint indices of the default skeleton
PELVIS, L_HIP, R_HIP, SPINE1 = 0, 1, 2, 3
L_KNEE, R_KNEE, SPINE2, L_ANKLE, R_ANKLE, SPINE3 = 4, 5, 6, 7, 8, 9
L_FOOT, R_FOOT, NECK, L_COLLAR, R_COLLAR, HEAD = 10, 11, 12, 13, 14, 15
L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW = 16, 17, 18, 19
L_WRIST, R_WRIST, L_HAND, R_HAND = 20, 21, 22, 23

NUM_JOINTS = 24
BASE_OMEGA = 2.0 * np.pi / 40.0  # rad per frame: one cycle per 2 s at 20 fps


def _common_params(rng: np.random.Generator) -> dict:
    return {
        "amp": float(rng.uniform(0.7, 1.3)),
        "omega": float(rng.uniform(0.8, 1.2)) * BASE_OMEGA,
        "phase": float(rng.uniform(0.0, 2.0 * np.pi)),
    }


def _wave_arm_params(rng: np.random.Generator) -> dict:
    p = _common_params(rng)
    p["lift"] = float(rng.uniform(0.9, 1.2))
    return p


def _wave_arm(side: str, params: dict, duration: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(duration, dtype=np.float64)
    osc = np.sin(params["omega"] * t + params["phase"])
    sign = 1.0 if side == "left" else -1.0
    shoulder = L_SHOULDER if side == "left" else R_SHOULDER
    elbow = L_ELBOW if side == "left" else R_ELBOW
    aa = np.zeros((duration, NUM_JOINTS, 3))
    aa[:, shoulder, 2] = sign * params["lift"]
    aa[:, elbow, 2] = sign * (0.7 + 0.5 * params["amp"] * osc)
    aa[:, SPINE2, 2] = 0.05 * params["amp"] * osc
    return aa, np.zeros((duration, 3))


def _squat(params: dict, duration: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(duration, dtype=np.float64)
    depth = 0.5 * (1.0 - np.cos(params["omega"] * t + params["phase"]))  # in [0, 1]
    theta = 0.9 * params["amp"] * depth
    aa = np.zeros((duration, NUM_JOINTS, 3))
    aa[:, L_HIP, 0] = -theta
    aa[:, R_HIP, 0] = -theta
    aa[:, L_KNEE, 0] = 1.8 * theta
    aa[:, R_KNEE, 0] = 1.8 * theta
    aa[:, L_ANKLE, 0] = -0.9 * theta
    aa[:, R_ANKLE, 0] = -0.9 * theta
    aa[:, SPINE1, 0] = -0.3 * theta
    trans = np.zeros((duration, 3))
    trans[:, 1] = -0.30 * params["amp"] * depth  # root drops with the squat
    return aa, trans


def _walk_in_place(params: dict, duration: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(duration, dtype=np.float64)
    step = np.sin(params["omega"] * t + params["phase"])
    aa = np.zeros((duration, NUM_JOINTS, 3))
    aa[:, L_HIP, 0] = -0.5 * params["amp"] * step
    aa[:, R_HIP, 0] = 0.5 * params["amp"] * step
    aa[:, L_KNEE, 0] = 0.5 * params["amp"] * (1.0 + step) / 2.0
    aa[:, R_KNEE, 0] = 0.5 * params["amp"] * (1.0 - step) / 2.0
    aa[:, L_SHOULDER, 0] = 0.25 * params["amp"] * step
    aa[:, R_SHOULDER, 0] = -0.25 * params["amp"] * step
    trans = np.zeros((duration, 3))
    # vertical bounce at twice the stepping frequency
    trans[:, 1] = 0.02 * params["amp"] * (1.0 - np.cos(2.0 * (params["omega"] * t + params["phase"]))) / 2.0
    return aa, trans


def _reach_forward(params: dict, duration: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(duration, dtype=np.float64)
    reach = 0.5 * (1.0 - np.cos(params["omega"] * t + params["phase"]))
    aa = np.zeros((duration, NUM_JOINTS, 3))
    aa[:, L_SHOULDER, 1] = -1.2 * params["amp"] * reach  # left arm (+x) swings to +z
    aa[:, R_SHOULDER, 1] = 1.2 * params["amp"] * reach
    aa[:, SPINE1, 0] = -0.15 * params["amp"] * reach
    trans = np.zeros((duration, 3))
    trans[:, 2] = 0.004 * params["amp"] * t  # steady forward drift
    return aa, trans


@dataclass(frozen=True)
class ActionGenerator:
    name: str
    sample_params: callable
    evaluate: callable  # (params, duration) -> (axis-angle (T, 24, 3), trans (T, 3))


GENERATORS: dict[str, ActionGenerator] = {
    "wave-left-arm": ActionGenerator(
        "wave-left-arm", _wave_arm_params, lambda p, T: _wave_arm("left", p, T)
    ),
    "wave-right-arm": ActionGenerator(
        "wave-right-arm", _wave_arm_params, lambda p, T: _wave_arm("right", p, T)
    ),
    "squat": ActionGenerator("squat", _common_params, _squat),
    "walk-in-place": ActionGenerator("walk-in-place", _common_params, _walk_in_place),
    "reach-forward": ActionGenerator("reach-forward", _common_params, _reach_forward),
}

DEFAULT_ACTIONS = tuple(GENERATORS)


@dataclass
class DatasetSpec:
    """What to synthesize: which actions, how many, how long, how noisy."""

    actions: tuple[str, ...] = DEFAULT_ACTIONS
    sequences_per_action: int = 100
    duration: int | tuple[int, int] = (60, 100)
    fps: float = 20.0
    rotation_noise_std: float = 0.05     # radians
    translation_noise_std: float = 0.01  # meters
    seed: int = 0

    def __post_init__(self):
        self.actions = tuple(self.actions)
        if len(self.actions) < 2:
            raise InvalidSpec("need at least 2 actions")
        unknown = [a for a in self.actions if a not in GENERATORS]
        if unknown:
            raise InvalidSpec(f"unknown action generators: {unknown}")
        if self.sequences_per_action < 1:
            raise InvalidSpec("sequences_per_action must be >= 1")
        if isinstance(self.duration, (list, tuple)):
            lo, hi = (int(v) for v in self.duration)
            if lo > hi:
                raise InvalidSpec("duration range must be (low, high) with low <= high")
            self.duration = (lo, hi)
        else:
            self.duration = int(self.duration)
        if self.min_duration < 8:
            raise InvalidSpec("durations must be >= 8 frames")
        if self.rotation_noise_std < 0 or self.translation_noise_std < 0:
            raise InvalidSpec("noise std must be >= 0")
        if self.fps <= 0:
            raise InvalidSpec("fps must be positive")

    @property
    def min_duration(self) -> int:
        return self.duration[0] if isinstance(self.duration, tuple) else self.duration

    @property
    def max_duration(self) -> int:
        return self.duration[1] if isinstance(self.duration, tuple) else self.duration


def synthesize(action: str, params: dict, duration: int, fps: float = 20.0,
               label: int | None = None) -> Motion:
    """Evaluate one generator's closed form into a noise-free Motion."""
    generator = GENERATORS[action]
    aa, trans = generator.evaluate(params, duration)
    aa_t = torch.as_tensor(aa, dtype=torch.float64)
    rot6d = rotations.matrix_to_sixd(rotations.axis_angle_to_matrix(aa_t), check=False)
    if label is None:
        label = list(GENERATORS).index(action)
    return Motion(rot6d.to(torch.float32), torch.as_tensor(trans, dtype=torch.float32), label, fps)


def add_noise(motion: Motion, rot_std: float, trans_std: float,
              rng: np.random.Generator) -> Motion:
    """Perturb each joint rotation by a random axis-angle and jitter the translation.

    Per-frame i.i.d.: every rotation is composed (on the right) with
    exp(eps), eps ~ N(0, rot_std^2 I_3); translation gets N(0, trans_std^2)
    noise. Zero stds return an identical copy.
    """
    if rot_std < 0 or trans_std < 0:
        raise ValueError("noise std must be >= 0")
    out = motion.clone()
    if rot_std > 0:
        eps = rng.normal(0.0, rot_std, size=(len(motion), motion.num_joints, 3))
        noise = rotations.axis_angle_to_matrix(torch.as_tensor(eps, dtype=torch.float64))
        mats = rotations.sixd_to_matrix(motion.rot6d.to(torch.float64))
        out.rot6d = rotations.matrix_to_sixd(mats @ noise, check=False).to(motion.rot6d.dtype)
    if trans_std > 0:
        jitter = rng.normal(0.0, trans_std, size=(len(motion), 3))
        out.trans = motion.trans + torch.as_tensor(jitter, dtype=motion.trans.dtype)
    return out


def generate_dataset(spec: DatasetSpec) -> tuple[list[Motion], list[str]]:
    """Synthesize the dataset described by `spec`.

    Returns (motions, splits) where splits holds "train"/"test" per motion,
    80/20 stratified by action. Deterministic given `spec.seed`.
    """
    rng = np.random.default_rng(spec.seed)
    motions: list[Motion] = []
    splits: list[str] = []
    for label, action in enumerate(spec.actions):
        generator = GENERATORS[action]
        n = spec.sequences_per_action
        n_train = int(0.8 * n)
        for i in range(n):
            if isinstance(spec.duration, tuple):
                duration = int(rng.integers(spec.duration[0], spec.duration[1] + 1))
            else:
                duration = spec.duration
            params = generator.sample_params(rng)
            motion = synthesize(action, params, duration, spec.fps, label)
            if spec.rotation_noise_std > 0 or spec.translation_noise_std > 0:
                motion = add_noise(motion, spec.rotation_noise_std, spec.translation_noise_std, rng)
            motions.append(motion)
            splits.append("train" if i < n_train else "test")
    return motions, splits


# -- file format -----------------------------------------------------------------


def save_motion(motion: Motion, path) -> None:
    """Write one motion as an .npz (lossless for the stored float32 arrays)."""
    arrays = {
        "format_version": np.str_(MOTION_FORMAT_VERSION),
        "rot6d": motion.rot6d.detach().cpu().numpy().astype(np.float32),
        "trans": motion.trans.detach().cpu().numpy().astype(np.float32),
        "action": np.int64(motion.action),
        "fps": np.float64(motion.fps),
    }
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_motion(path) -> Motion:
    """Read a motion file, checking format version and shape consistency."""
    try:
        with np.load(path, allow_pickle=False) as data:
            if "format_version" not in data:
                raise CorruptFile(f"{path}: missing format_version")
            version = str(data["format_version"])
            if version != MOTION_FORMAT_VERSION:
                raise VersionMismatch(
                    f"{path}: format_version {version!r}, expected {MOTION_FORMAT_VERSION!r}"
                )
            missing = [k for k in ("rot6d", "trans", "action", "fps") if k not in data]
            if missing:
                raise CorruptFile(f"{path}: missing keys {missing}")
            rot6d = np.asarray(data["rot6d"])
            trans = np.asarray(data["trans"])
            action = int(data["action"])
            fps = float(data["fps"])
    except (VersionMismatch, CorruptFile):
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise CorruptFile(f"{path}: unreadable motion file ({exc})") from exc
    try:
        return Motion(torch.from_numpy(rot6d), torch.from_numpy(trans), action, fps)
    except Exception as exc:
        raise CorruptFile(f"{path}: invalid motion contents ({exc})") from exc


def save_dataset(motions: list[Motion], splits: list[str], action_names, out_dir) -> None:
    """Write motion files plus a JSON manifest into `out_dir`."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, (motion, split) in enumerate(zip(motions, splits)):
        name = f"motion_{i:05d}.npz"
        save_motion(motion, os.path.join(out_dir, name))
        entries.append({"file": name, "action": int(motion.action), "split": split})
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "actions": list(action_names),
        "files": entries,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(dataset_dir) -> tuple[list[Motion], list[str], list[str]]:
    """Read a dataset directory. Returns (motions, splits, action_names)."""
    manifest_path = os.path.join(dataset_dir, MANIFEST_NAME)
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except OSError as exc:
        raise CorruptFile(f"{manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{manifest_path}: invalid JSON ({exc})") from exc
    if manifest.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise VersionMismatch(
            f"{manifest_path}: format_version {manifest.get('format_version')!r}, "
            f"expected {MANIFEST_FORMAT_VERSION!r}"
        )
    motions, splits = [], []
    for entry in manifest["files"]:
        motions.append(load_motion(os.path.join(dataset_dir, entry["file"])))
        splits.append(entry["split"])
    return motions, splits, list(manifest["actions"])


def split_motions(motions: list[Motion], splits: list[str], which: str) -> list[Motion]:
    """Select the motions whose split label equals `which`."""
    return [m for m, s in zip(motions, splits) if s == which]


# -- sanity utility -----------------------------------------------------------------


def nearest_centroid_accuracy(
    motions: list[Motion], splits: list[str], resample_to: int = 16
) -> float:
    """Accuracy (%) of a nearest-centroid classifier on raw joint trajectories.

    A deliberately crude separability floor: joint positions (root displacement
    applied) are linearly resampled to `resample_to` frames, flattened, and
    test items are assigned to the nearest train-split class centroid.
    """
    skeleton = default_skeleton()

    def feats(motion: Motion) -> np.ndarray:
        pos = forward_kinematics(
            skeleton, motion.rot6d.to(torch.float64), motion.trans.to(torch.float64)
        ).numpy()
        t = len(motion)
        grid = np.linspace(0.0, t - 1.0, resample_to)
        lo = np.floor(grid).astype(int)
        hi = np.minimum(lo + 1, t - 1)
        w = (grid - lo)[:, None, None]
        return ((1.0 - w) * pos[lo] + w * pos[hi]).reshape(-1)

    train_feats: dict[int, list[np.ndarray]] = {}
    test_items = []
    for motion, split in zip(motions, splits):
        if split == "train":
            train_feats.setdefault(motion.action, []).append(feats(motion))
        else:
            test_items.append((motion.action, feats(motion)))
    centroids = {a: np.mean(v, axis=0) for a, v in train_feats.items()}
    labels = sorted(centroids)
    correct = 0
    for action, f in test_items:
        dists = [np.linalg.norm(f - centroids[a]) for a in labels]
        if labels[int(np.argmin(dists))] == action:
            correct += 1
    return 100.0 * correct / max(1, len(test_items))
