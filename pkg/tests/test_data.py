import math
import zipfile

import numpy as np
import pytest
import torch

from actor import body as B
from actor import data as D
from actor import rotations as R
from actor.errors import CorruptFile, InvalidSpec, VersionMismatch

from conftest import make_tiny_dataset


def motions_equal(a, b):
    return (
        torch.equal(a.rot6d, b.rot6d)
        and torch.equal(a.trans, b.trans)
        and a.action == b.action
        and a.fps == b.fps
    )


def test_generate_dataset_deterministic():
    m1, s1 = make_tiny_dataset(seed=5)
    m2, s2 = make_tiny_dataset(seed=5)
    m3, _ = make_tiny_dataset(seed=6)
    assert s1 == s2
    assert all(motions_equal(a, b) for a, b in zip(m1, m2))
    assert any(not motions_equal(a, b) for a, b in zip(m1, m3))


def test_split_is_stratified_80_20():
    actions = ("squat", "walk-in-place", "wave-left-arm", "wave-right-arm", "reach-forward")
    motions, splits = make_tiny_dataset(actions=actions, sequences_per_action=10)
    assert splits.count("train") == 40 and splits.count("test") == 10
    for label in range(5):
        rows = [s for m, s in zip(motions, splits) if m.action == label]
        assert rows.count("train") == 8 and rows.count("test") == 2


def test_duration_range_sampling():
    motions, _ = make_tiny_dataset(duration=(10, 14), sequences_per_action=20, seed=2)
    lengths = {len(m) for m in motions}
    assert lengths <= set(range(10, 15))
    assert len(lengths) > 1


def test_spec_validation():
    with pytest.raises(InvalidSpec):
        D.DatasetSpec(actions=("squat",))
    with pytest.raises(InvalidSpec):
        D.DatasetSpec(actions=("squat", "unknown-action"))
    with pytest.raises(InvalidSpec):
        D.DatasetSpec(duration=4)
    with pytest.raises(InvalidSpec):
        D.DatasetSpec(rotation_noise_std=-0.1)
    with pytest.raises(InvalidSpec):
        D.DatasetSpec(sequences_per_action=0)


def _elbow_angles(motion, joint):
    mats = R.sixd_to_matrix(motion.rot6d[:, joint].to(torch.float64))
    return R.matrix_to_axis_angle(mats)


def test_noise_free_wave_matches_closed_form():
    params = {"amp": 1.0, "omega": 0.2, "phase": 0.3, "lift": 1.1}
    motion = D.synthesize("wave-left-arm", params, duration=24)
    t = np.arange(24)
    expected = 0.7 + 0.5 * np.sin(0.2 * t + 0.3)
    got = _elbow_angles(motion, D.L_ELBOW).numpy()
    assert np.abs(got[:, 2] - expected).max() < 1e-5
    assert np.abs(got[:, :2]).max() < 1e-6  # pure z-axis rotation
    shoulder = _elbow_angles(motion, D.L_SHOULDER).numpy()
    assert np.abs(shoulder[:, 2] - 1.1).max() < 1e-5
    assert float(motion.trans.abs().max()) == 0.0


def test_noise_free_squat_and_reach_translations_match_formula():
    params = {"amp": 0.9, "omega": 0.25, "phase": 0.0}
    squat = D.synthesize("squat", params, duration=20)
    t = np.arange(20)
    depth = 0.5 * (1.0 - np.cos(0.25 * t))
    assert np.abs(squat.trans[:, 1].numpy() - (-0.30 * 0.9 * depth)).max() < 1e-6
    hips = _elbow_angles(squat, D.L_HIP).numpy()
    assert np.abs(hips[:, 0] - (-0.9 * 0.9 * depth)).max() < 1e-5

    reach = D.synthesize("reach-forward", params, duration=20)
    assert np.abs(reach.trans[:, 2].numpy() - 0.004 * 0.9 * t).max() < 1e-6
    walk = D.synthesize("walk-in-place", params, duration=20)
    bounce = 0.02 * 0.9 * (1.0 - np.cos(2 * (0.25 * t))) / 2.0
    assert np.abs(walk.trans[:, 1].numpy() - bounce).max() < 1e-6


def test_add_noise_zero_std_is_identity():
    motion, _ = make_tiny_dataset(sequences_per_action=1, actions=("squat", "walk-in-place"))
    out = D.add_noise(motion[0], 0.0, 0.0, np.random.default_rng(0))
    assert motions_equal(out, motion[0])


def test_add_noise_deterministic():
    motion = make_tiny_dataset(sequences_per_action=1)[0][0]
    a = D.add_noise(motion, 0.05, 0.01, np.random.default_rng(3))
    b = D.add_noise(motion, 0.05, 0.01, np.random.default_rng(3))
    assert motions_equal(a, b)
    assert not motions_equal(a, motion)


def test_add_noise_mean_geodesic_matches_chi3_expectation():
    # angle of exp(eps), eps ~ N(0, s^2 I3), has mean s * 2 * sqrt(2/pi)
    std = 0.05
    motion = D.synthesize("squat", {"amp": 1.0, "omega": 0.2, "phase": 0.0}, duration=420)
    noisy = D.add_noise(motion, std, 0.0, np.random.default_rng(4))
    before = R.sixd_to_matrix(motion.rot6d.reshape(-1, 6).to(torch.float64))
    after = R.sixd_to_matrix(noisy.rot6d.reshape(-1, 6).to(torch.float64))
    angles = R.geodesic_distance(before, after)
    assert angles.numel() >= 10_000
    expected = std * 2.0 * math.sqrt(2.0 / math.pi)
    assert abs(float(angles.mean()) - expected) / expected < 0.05


def test_generated_motions_pass_invariants():
    motions, _ = make_tiny_dataset(
        sequences_per_action=3, rotation_noise_std=0.05, translation_noise_std=0.01, seed=7
    )
    for motion in motions:
        mats = R.sixd_to_matrix(motion.rot6d.to(torch.float64).reshape(-1, 6))
        R.validate_matrix(mats, tol=1e-4)
        once = B.canonicalize_frontal(motion)
        twice = B.canonicalize_frontal(once)
        assert float((once.rot6d - twice.rot6d).abs().max()) < 1e-6


def test_motion_file_round_trip(tmp_path):
    motion = make_tiny_dataset(sequences_per_action=1)[0][0]
    path = tmp_path / "m.npz"
    D.save_motion(motion, path)
    loaded = D.load_motion(path)
    assert motions_equal(motion, loaded)


def test_motion_file_truncated_is_corrupt(tmp_path):
    motion = make_tiny_dataset(sequences_per_action=1)[0][0]
    path = tmp_path / "m.npz"
    D.save_motion(motion, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptFile):
        D.load_motion(path)


def test_motion_file_wrong_version(tmp_path):
    path = tmp_path / "m.npz"
    np.savez(
        path,
        format_version=np.str_("motion-v999"),
        rot6d=np.zeros((2, 24, 6), dtype=np.float32),
        trans=np.zeros((2, 3), dtype=np.float32),
        action=np.int64(0),
        fps=np.float64(20.0),
    )
    with pytest.raises(VersionMismatch):
        D.load_motion(path)


def test_motion_file_missing_key(tmp_path):
    path = tmp_path / "m.npz"
    np.savez(path, format_version=np.str_("motion-v1"), rot6d=np.zeros((2, 24, 6)))
    with pytest.raises(CorruptFile):
        D.load_motion(path)


def test_dataset_directory_round_trip(tmp_path):
    motions, splits = make_tiny_dataset(sequences_per_action=3, seed=8)
    out = tmp_path / "ds"
    D.save_dataset(motions, splits, ("squat", "walk-in-place", "wave-left-arm"), out)
    loaded, lsplits, actions = D.load_dataset(out)
    assert lsplits == splits
    assert actions == ["squat", "walk-in-place", "wave-left-arm"]
    assert all(motions_equal(a, b) for a, b in zip(motions, loaded))
    assert len(D.split_motions(loaded, lsplits, "train")) == splits.count("train")


def test_dataset_manifest_errors(tmp_path):
    with pytest.raises(CorruptFile):
        D.load_dataset(tmp_path / "missing")
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "manifest.json").write_text('{"format_version": "motion-dataset-v9", "files": []}')
    with pytest.raises(VersionMismatch):
        D.load_dataset(bad)
    worse = tmp_path / "worse"
    worse.mkdir()
    (worse / "manifest.json").write_text("not json {")
    with pytest.raises(CorruptFile):
        D.load_dataset(worse)


def test_nearest_centroid_separability_floor():
    motions, splits = make_tiny_dataset(
        actions=D.DEFAULT_ACTIONS, sequences_per_action=15, duration=24, seed=9,
        rotation_noise_std=0.0, translation_noise_std=0.0,
    )
    assert D.nearest_centroid_accuracy(motions, splits) > 95.0
