import numpy as np
import pytest
import scipy.linalg
import torch

from actor import evaluation as E
from actor import model as M
from actor.errors import (
    ActionSetMismatch,
    DegenerateMoments,
    EmptyInput,
    InsufficientData,
    InsufficientSamples,
)

from conftest import make_tiny_dataset, tiny_model_config


# -- fid -----------------------------------------------------------------------------


def test_fid_self_is_zero():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(500, 8))
    assert E.fid(x, x.copy()) < 1e-8


def test_fid_shifted_gaussian_closed_form_1d():
    rng = np.random.default_rng(1)
    x = rng.normal(0.0, 1.0, size=(5000, 1))
    for m in (0.5, 2.0, -3.0):
        assert abs(E.fid(x, x + m) - m * m) < 1e-6


def test_fid_matches_scipy_sqrtm_oracle():
    rng = np.random.default_rng(2)
    for trial in range(5):
        a = rng.normal(size=(400, 8)) @ rng.normal(size=(8, 8)) + rng.normal(size=8)
        b = rng.normal(size=(400, 8)) @ rng.normal(size=(8, 8)) + rng.normal(size=8)
        mu_a, mu_b = a.mean(0), b.mean(0)
        cov_a = np.cov(a, rowvar=False, ddof=1)
        cov_b = np.cov(b, rowvar=False, ddof=1)
        covmean = scipy.linalg.sqrtm(cov_a @ cov_b).real
        oracle = float((mu_a - mu_b) @ (mu_a - mu_b)
                       + np.trace(cov_a + cov_b - 2.0 * covmean))
        assert abs(E.fid(a, b) - oracle) < 1e-6


def test_fid_disjoint_halves_of_one_gaussian_are_close():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2000, 16))
    assert E.fid(x[:1000], x[1000:]) < 0.5


def test_fid_symmetry():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(300, 6)), rng.normal(size=(300, 6)) + 1.0
    assert abs(E.fid(a, b) - E.fid(b, a)) < 1e-8


def test_fid_translation_sensitivity():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(800, 8))
    v = rng.normal(size=8)
    assert abs(E.fid(x, x + v) - float(v @ v)) < 1e-4


def test_fid_degenerate_inputs():
    with pytest.raises(DegenerateMoments):
        E.fid(np.zeros((1, 4)), np.zeros((10, 4)))
    with pytest.raises(DegenerateMoments):
        E.fid(np.full((10, 4), np.nan), np.zeros((10, 4)))
    # regularization path: fewer samples than dimensions still works
    rng = np.random.default_rng(6)
    small = rng.normal(size=(5, 8))
    assert np.isfinite(E.fid(small, rng.normal(size=(5, 8))))


# -- diversity / multimodality ----------------------------------------------------------


def test_diversity_identical_features_is_zero():
    features = np.ones((10, 4))
    assert E.diversity(features, 100, np.random.default_rng(0)) == 0.0
    assert E.multimodality(features, np.zeros(10), 10, np.random.default_rng(0)) == 0.0


def test_diversity_two_point_masses_expectation():
    d = 3.0
    features = np.array([[0.0], [0.0], [d], [d]])
    # exhaustive uniform pairing over all ordered pairs gives D/2
    exhaustive = np.mean([
        abs(features[i, 0] - features[j, 0]) for i in range(4) for j in range(4)
    ])
    assert abs(exhaustive - d / 2) < 1e-12
    est = E.diversity(features, 20000, np.random.default_rng(7))
    assert 0.0 <= est <= d
    assert abs(est - d / 2) < 0.02 * d


def test_diversity_invariant_to_l2_preserving_transforms():
    rng = np.random.default_rng(8)
    f = rng.normal(size=(50, 6))
    base = E.diversity(f, 500, np.random.default_rng(9))
    perm = E.diversity(f[:, ::-1], 500, np.random.default_rng(9))
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    rot = E.diversity(f @ q, 500, np.random.default_rng(9))
    assert abs(base - perm) < 1e-6
    assert abs(base - rot) < 1e-6


def test_multimodality_single_point_classes_is_zero():
    features = np.array([[0.0, 0], [5.0, 0], [0, 9.0]])
    labels = np.array([0, 1, 2])
    assert E.multimodality(features, labels, 10, np.random.default_rng(0)) == 0.0


def test_diversity_insufficient_samples():
    with pytest.raises(InsufficientSamples):
        E.diversity(np.zeros((0, 4)), 10, np.random.default_rng(0))
    with pytest.raises(InsufficientSamples):
        E.multimodality(np.zeros((0, 4)), np.zeros(0), 10, np.random.default_rng(0))


# -- recognizer --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_setup():
    motions, splits = make_tiny_dataset(
        actions=("squat", "walk-in-place", "wave-left-arm"),
        sequences_per_action=20, duration=24, seed=10,
    )
    train_set = [m for m, s in zip(motions, splits) if s == "train"]
    test_set = [m for m, s in zip(motions, splits) if s == "test"]
    recognizer = E.train_recognizer(train_set, 3, epochs=40, seed=0)
    return train_set, test_set, recognizer


def test_recognizer_accuracy_on_noise_free_toy(toy_setup):
    _, test_set, recognizer = toy_setup
    assert E.accuracy(recognizer, test_set) >= 95.0


def test_recognizer_single_class_insufficient():
    motions, _ = make_tiny_dataset(sequences_per_action=4, seed=11)
    one_class = [m for m in motions if m.action == 0]
    with pytest.raises(InsufficientData):
        E.train_recognizer(one_class, 3)


def test_feature_extraction_shape(toy_setup):
    train_set, _, recognizer = toy_setup
    feats = E.extract_features(recognizer, train_set[:7])
    assert feats.features.shape == (7, 64)
    assert feats.labels.shape == (7,)


def test_accuracy_trivials(toy_setup):
    train_set, _, recognizer = toy_setup
    assert E.accuracy(recognizer, train_set) == 100.0
    with pytest.raises(EmptyInput):
        E.accuracy(recognizer, [])


def test_accuracy_random_labels_near_chance(toy_setup):
    train_set, _, recognizer = toy_setup
    rng = np.random.default_rng(12)
    relabeled = []
    for motion in train_set * 4:  # n = 120 for a tight binomial bound
        m = motion.clone()
        m.action = int(rng.integers(0, 3))
        relabeled.append(m)
    acc = E.accuracy(recognizer, relabeled)
    n, p = len(relabeled), 1.0 / 3.0
    sigma = 100.0 * np.sqrt(p * (1 - p) / n)
    assert abs(acc - 100.0 * p) <= 3.0 * sigma


# -- protocol ----------------------------------------------------------------------------


def test_mean_ci95_halves_when_seeds_quadruple():
    rng = np.random.default_rng(13)
    values = rng.normal(10.0, 2.0, size=80)
    _, ci20 = E.mean_ci95(values[:20])
    _, ci80 = E.mean_ci95(values)
    assert ci80 <= 0.75 * ci20  # 0.5 in expectation, 1.5x slack


def test_evaluate_protocol_columns_and_determinism(toy_setup):
    train_set, test_set, recognizer = toy_setup
    model = M.build_variant(tiny_model_config(), seed=0)
    kwargs = dict(per_action_count=4, seeds=3, duration=16, base_seed=5)
    r1 = E.evaluate(model, recognizer, train_set, test_set, **kwargs)
    r2 = E.evaluate(model, recognizer, train_set, test_set, **kwargs)
    assert r1.to_dict() == r2.to_dict()
    assert set(E.METRIC_COLUMNS) <= set(r1.to_dict())
    table = E.format_report_table({"Generated": r1})
    for header in ("FID_tr", "FID_test", "Acc.", "Div.", "Multimod."):
        assert header in table
    assert "±" in table


def test_evaluate_real_row_self_comparison(toy_setup):
    train_set, test_set, recognizer = toy_setup
    real = E.evaluate_real(recognizer, train_set, test_set, per_action_count=6, seeds=3)
    # sampling the real test split against itself: near-zero FID,
    # recognizer-level accuracy
    assert real.fid_test[0] < 0.5
    assert abs(real.accuracy[0] - E.accuracy(recognizer, test_set)) <= 5.0
    assert 0.0 <= real.accuracy[0] <= 100.0


def test_evaluate_action_set_mismatch(toy_setup):
    train_set, test_set, recognizer = toy_setup
    model = M.build_variant(tiny_model_config(num_actions=5), seed=0)
    with pytest.raises(ActionSetMismatch):
        E.evaluate(model, recognizer, train_set, test_set, seeds=1)
