import math

import numpy as np
import pytest
import torch

from actor import applications as A
from actor import body as B
from actor import model as M
from actor.errors import ActionMismatch, AlphaOutOfRange, TooShort, UnknownAction

from conftest import make_tiny_dataset, tiny_model_config


@pytest.fixture(scope="module")
def setup():
    motions, splits = make_tiny_dataset(
        sequences_per_action=4, duration=16, seed=20,
        rotation_noise_std=0.03, translation_noise_std=0.01,
    )
    model = M.build_variant(tiny_model_config(), seed=0)
    return motions, model


def constant_motion(duration=10, action=0):
    rot = torch.zeros(duration, 24, 6, dtype=torch.float64)
    rot[..., 0] = 1.0
    rot[..., 4] = 1.0
    trans = torch.zeros(duration, 3, dtype=torch.float64)
    return B.Motion(rot, trans, action)


def test_jitter_score_constant_pose_is_zero():
    assert A.jitter_score(constant_motion()) == 0.0


def test_jitter_score_linear_translation_is_zero():
    motion = constant_motion(12)
    motion.trans = torch.linspace(0, 1, 12, dtype=torch.float64)[:, None] * torch.tensor(
        [1.0, 0.5, -0.25], dtype=torch.float64
    )
    assert A.jitter_score(motion) < 1e-24


def test_jitter_score_sinusoid_matches_analytic_second_difference():
    duration, amp, omega = 40, 0.2, 0.7
    motion = constant_motion(duration)
    t = torch.arange(duration, dtype=torch.float64)
    motion.trans[:, 1] = amp * torch.sin(omega * t)
    # every joint translates identically, so the per-joint-coordinate mean
    # equals the mean squared second difference of the scalar signal
    signal = (amp * np.sin(omega * np.arange(duration)))
    second = signal[2:] - 2 * signal[1:-1] + signal[:-2]
    expected = float(np.mean(second**2)) / 3.0  # spread over 3 coords per joint
    assert abs(A.jitter_score(motion) - expected) < 1e-9


def test_jitter_score_too_short():
    with pytest.raises(TooShort):
        A.jitter_score(constant_motion(2))


def test_denoise_preserves_length_and_is_deterministic(setup):
    motions, model = setup
    for duration in (10, 13, 16):
        motion = next(m for m in motions if len(m) >= duration)
        cropped = B.Motion(motion.rot6d[:duration], motion.trans[:duration], motion.action)
        out1 = A.denoise(model, cropped)
        out2 = A.denoise(model, cropped)
        assert len(out1) == duration
        assert torch.equal(out1.rot6d, out2.rot6d)
        assert out1.action == cropped.action


def test_denoise_unknown_action(setup):
    motions, model = setup
    with pytest.raises(UnknownAction):
        A.denoise(model, motions[0], action=99)


def test_interpolate_alpha_zero_equals_denoise(setup):
    motions, model = setup
    same = [m for m in motions if m.action == 0][:2]
    out = A.interpolate_latent(model, same[0], same[1], 0, alpha=0.0)
    ref = A.denoise(model, same[0])
    assert torch.equal(out.rot6d, ref.rot6d)
    # alpha = 1 uses m2's latent but m1's duration (documented caveat)
    out1 = A.interpolate_latent(model, same[0], same[1], 0, alpha=1.0)
    assert len(out1) == len(same[0])


def test_interpolate_validation(setup):
    motions, model = setup
    a0 = [m for m in motions if m.action == 0][0]
    a1 = [m for m in motions if m.action == 1][0]
    with pytest.raises(ActionMismatch):
        A.interpolate_latent(model, a0, a1, 0, alpha=0.5)
    b0 = [m for m in motions if m.action == 0][1]
    with pytest.raises(AlphaOutOfRange):
        A.interpolate_latent(model, a0, b0, 0, alpha=1.5)


def test_interpolate_midpoint_is_valid_and_continuous(setup):
    motions, model = setup
    same = [m for m in motions if m.action == 2][:2]
    mid = A.interpolate_latent(model, same[0], same[1], 2, alpha=0.5)
    assert len(mid) == len(same[0])
    assert bool(torch.isfinite(mid.rot6d).all())
    near = A.interpolate_latent(model, same[0], same[1], 2, alpha=0.5 + 1e-3)
    dist = float((mid.rot6d - near.rot6d).norm())
    scale = float(mid.rot6d.norm())
    assert dist < 1e-2 * scale


def test_augment_train_classifier_mixes(setup):
    motions, model = setup
    train_set = [m for m in motions]
    test_set = [m for m in motions][:6]
    for mix in A.MIXES:
        _, summary = A.augment_train_classifier(
            train_set, test_set, model, mix=mix, fraction=0.5, epochs=2, seed=0,
            duration=16,
        )
        assert summary["mix"] == mix
        assert 0.0 <= summary["accuracy_real_test"] <= 100.0
    with pytest.raises(ValueError):
        A.augment_train_classifier(train_set, test_set, model, mix="bogus")
    with pytest.raises(ValueError):
        A.augment_train_classifier(train_set, test_set, model, fraction=0.0)


def test_transfer_table_layout(setup):
    motions, model = setup
    train_set = [m for m in motions][:9]
    test_set = [m for m in motions][:6]
    table = A.recognition_transfer_table(train_set, test_set, model, epochs=1, seed=0,
                                         duration=16)
    assert set(table.rows) == {
        "Real_orig", "Real_denoised", "Real_interpolated", "Generated",
        "Real_orig + Generated",
    }
    for cells in table.rows.values():
        assert set(cells) == {"Real_orig", "Real_denoised"}
    text = table.format()
    assert "Real_orig + Generated" in text and "note:" in text


def test_lowdata_sweep_shape(setup):
    motions, model = setup
    out = A.lowdata_sweep(motions, motions[:6], model, fractions=(0.5, 1.0), epochs=1,
                          duration=16)
    assert set(out) == {0.5, 1.0}
    assert set(out[0.5]) == {"real_only", "real_plus_gen"}
