"""Metric stack: recognition model, FID, accuracy, diversity, multimodality.

A small recurrent classifier over per-frame 6D-rotation (+ translation)
inputs doubles as the feature extractor: its last hidden state (64-d by
default) is the feature, its linear head the classifier. All distribution
metrics operate on those features.

The evaluation protocol generates action-balanced sets under `seeds`
different random seeds and reports mean +/- the 95% confidence interval
(1.96 * std / sqrt(seeds)) per metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor, nn

from .body import Motion
from .errors import (
    ActionSetMismatch,
    DegenerateMoments,
    EmptyInput,
    InsufficientData,
    InsufficientSamples,
)
from .model import MotionVAE
from .training import collate

FEATURE_DIM = 64


@dataclass
class FeatureSet:
    """Extracted motion features with their labels."""

    features: np.ndarray  # (N, F)
    labels: np.ndarray    # (N,)
    source: str = "generated"  # real_train | real_test | generated

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be (N, F) with one label per row")
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")

    def __len__(self) -> int:
        return self.features.shape[0]


class MotionRecognizer(nn.Module):
    """Two-layer GRU classifier; the final hidden state is the feature vector."""

    def __init__(self, num_actions: int, num_joints: int = 24, include_translation: bool = True,
                 hidden: int = FEATURE_DIM, layers: int = 2):
        super().__init__()
        self.num_actions = num_actions
        self.num_joints = num_joints
        self.include_translation = include_translation
        input_dim = num_joints * 6 + (3 if include_translation else 0)
        self.embed = nn.Linear(input_dim, hidden)
        self.gru = nn.GRU(hidden, hidden, num_layers=layers, batch_first=True)
        self.head = nn.Linear(hidden, num_actions)

    @property
    def feature_dim(self) -> int:
        return self.head.in_features

    def _inputs(self, rot6d: Tensor, trans: Tensor) -> Tensor:
        feats = rot6d.reshape(*rot6d.shape[:-2], -1)
        if self.include_translation:
            feats = torch.cat([feats, trans], dim=-1)
        return feats

    def forward(self, rot6d: Tensor, trans: Tensor, lengths: Tensor):
        """Returns (logits (B, A), features (B, hidden))."""
        x = self.embed(self._inputs(rot6d, trans))
        packed = nn.utils.rnn.pack_padded_sequence(
            x, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        _, h_n = self.gru(packed)
        features = h_n[-1]
        return self.head(features), features


def _recognizer_batches(motions: list[Motion], indices, batch_size: int):
    for lo in range(0, len(indices), batch_size):
        chunk = [motions[i] for i in indices[lo : lo + batch_size]]
        yield collate(chunk), [m.action for m in chunk]


def train_recognizer(
    motions: list[Motion],
    num_actions: int,
    include_translation: bool = True,
    epochs: int = 40,
    batch_size: int = 32,
    learning_rate: float = 1e-3,
    seed: int = 0,
    hidden: int = FEATURE_DIM,
) -> MotionRecognizer:
    """Train the recognition model on labeled motions.

    Raises InsufficientData when fewer than two classes are present.
    """
    present = sorted({m.action for m in motions})
    if len(present) < 2:
        raise InsufficientData(f"need >= 2 classes, got labels {present}")
    if max(present) >= num_actions:
        raise ActionSetMismatch(f"label {max(present)} outside [0, {num_actions})")

    torch.manual_seed(seed)
    recognizer = MotionRecognizer(
        num_actions, motions[0].num_joints, include_translation, hidden=hidden
    )
    optimizer = torch.optim.Adam(recognizer.parameters(), lr=learning_rate)
    rng = np.random.default_rng(seed)
    loss_fn = nn.CrossEntropyLoss()

    recognizer.train()
    for _ in range(epochs):
        order = rng.permutation(len(motions))
        for batch, labels in _recognizer_batches(motions, order, batch_size):
            logits, _ = recognizer(batch.rot6d, batch.trans, batch.lengths)
            loss = loss_fn(logits, torch.tensor(labels))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    recognizer.eval()
    return recognizer


@torch.no_grad()
def extract_features(recognizer: MotionRecognizer, motions: list[Motion],
                     source: str = "generated", batch_size: int = 64) -> FeatureSet:
    """Run the recognizer and collect (N, F) penultimate features."""
    if not motions:
        raise EmptyInput("no motions to featurize")
    recognizer.eval()
    feats, labels = [], []
    for batch, batch_labels in _recognizer_batches(motions, range(len(motions)), batch_size):
        _, f = recognizer(batch.rot6d, batch.trans, batch.lengths)
        feats.append(f.numpy())
        labels.extend(batch_labels)
    return FeatureSet(np.concatenate(feats, axis=0), np.asarray(labels), source)


@torch.no_grad()
def classify(recognizer: MotionRecognizer, motions: list[Motion],
             batch_size: int = 64) -> np.ndarray:
    """Predicted labels; argmax ties break toward the lowest class index."""
    if not motions:
        raise EmptyInput("no motions to classify")
    recognizer.eval()
    preds = []
    for batch, _ in _recognizer_batches(motions, range(len(motions)), batch_size):
        logits, _ = recognizer(batch.rot6d, batch.trans, batch.lengths)
        preds.append(np.argmax(logits.numpy(), axis=1))
    return np.concatenate(preds)


def accuracy(recognizer: MotionRecognizer, motions: list[Motion]) -> float:
    """Percent of motions whose predicted label matches their action label."""
    preds = classify(recognizer, motions)
    labels = np.asarray([m.action for m in motions])
    return 100.0 * float(np.mean(preds == labels))


# -- distribution metrics -------------------------------------------------------------


def _features_of(x) -> np.ndarray:
    return x.features if isinstance(x, FeatureSet) else np.asarray(x, dtype=np.float64)


def _moments(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, f = features.shape
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False, ddof=1).reshape(f, f)
    if n <= f:
        cov = cov + 1e-6 * np.eye(f)  # regularize under-determined moments
    return mean, cov


def _sqrt_psd(mat: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    w = np.where(w < floor, 0.0, w)  # clamp negative numerical eigenvalues
    return (v * np.sqrt(w)) @ v.T


def fid(set_a, set_b) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the matrix
    square root taken by eigendecomposition of the symmetrized product
    sqrt(S_a) S_b sqrt(S_a).
    """
    fa, fb = _features_of(set_a), _features_of(set_b)
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise DegenerateMoments("need at least 2 samples per set for moment estimation")
    if fa.shape[1] != fb.shape[1]:
        raise DegenerateMoments(f"feature dims differ: {fa.shape[1]} vs {fb.shape[1]}")
    mu_a, cov_a = _moments(fa)
    mu_b, cov_b = _moments(fb)
    if not (np.isfinite(cov_a).all() and np.isfinite(cov_b).all()
            and np.isfinite(mu_a).all() and np.isfinite(mu_b).all()):
        raise DegenerateMoments("feature moments are not finite")
    try:
        sqrt_a = _sqrt_psd(cov_a)
        inner = sqrt_a @ cov_b @ sqrt_a
        eigvals = np.linalg.eigvalsh(inner)
    except np.linalg.LinAlgError as exc:
        raise DegenerateMoments(f"covariance square root failed ({exc})") from exc
    trace_sqrt = np.sum(np.sqrt(np.clip(eigvals, 0.0, None)))
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    if not np.isfinite(value):
        raise DegenerateMoments("FID computation produced a non-finite value")
    return value


def diversity(features, pairs: int = 200, rng: np.random.Generator | None = None) -> float:
    """Mean L2 distance over `pairs` uniformly sampled cross-corpus feature pairs."""
    f = _features_of(features)
    if f.shape[0] < 1:
        raise InsufficientSamples("no features to pair")
    rng = rng or np.random.default_rng(0)
    i = rng.integers(0, f.shape[0], size=pairs)
    j = rng.integers(0, f.shape[0], size=pairs)
    return float(np.linalg.norm(f[i] - f[j], axis=1).mean())


def multimodality(features, labels=None, pairs_per_class: int = 20,
                  rng: np.random.Generator | None = None) -> float:
    """Mean over classes of the mean within-class pairwise feature distance."""
    if isinstance(features, FeatureSet):
        f, lab = features.features, features.labels
    else:
        f, lab = np.asarray(features, dtype=np.float64), np.asarray(labels)
    if f.shape[0] < 1:
        raise InsufficientSamples("no features to pair")
    rng = rng or np.random.default_rng(0)
    per_class = []
    for cls in np.unique(lab):
        idx = np.flatnonzero(lab == cls)
        i = rng.integers(0, idx.size, size=pairs_per_class)
        j = rng.integers(0, idx.size, size=pairs_per_class)
        per_class.append(np.linalg.norm(f[idx[i]] - f[idx[j]], axis=1).mean())
    return float(np.mean(per_class))


# -- 20-seed evaluation protocol --------------------------------------------------------


def mean_ci95(values) -> tuple[float, float]:
    """(mean, 1.96 * std / sqrt(n)) over per-seed metric values."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size < 2:
        return float(arr.mean()), 0.0
    return float(arr.mean()), float(1.96 * arr.std(ddof=1) / np.sqrt(arr.size))


METRIC_COLUMNS = ("fid_train", "fid_test", "accuracy", "diversity", "multimodality")
COLUMN_HEADERS = {
    "fid_train": "FID_tr",
    "fid_test": "FID_test",
    "accuracy": "Acc.",
    "diversity": "Div.",
    "multimodality": "Multimod.",
}


@dataclass
class EvalReport:
    """Per-metric (mean, ci95) plus the raw per-seed values."""

    fid_train: tuple[float, float]
    fid_test: tuple[float, float]
    accuracy: tuple[float, float]
    diversity: tuple[float, float]
    multimodality: tuple[float, float]
    seeds: int = 20
    per_seed: dict = field(default_factory=dict)

    @classmethod
    def from_per_seed(cls, per_seed: dict[str, list[float]]) -> "EvalReport":
        stats = {k: mean_ci95(v) for k, v in per_seed.items()}
        return cls(
            seeds=len(per_seed["fid_train"]), per_seed=per_seed,
            **{k: stats[k] for k in METRIC_COLUMNS},
        )

    def to_dict(self) -> dict:
        out = {"seeds": self.seeds}
        for key in METRIC_COLUMNS:
            mean, ci = getattr(self, key)
            out[key] = {"mean": mean, "ci95": ci}
        out["per_seed"] = {k: list(map(float, v)) for k, v in self.per_seed.items()}
        return out


def format_cell(mean: float, ci: float) -> str:
    return f"{mean:.2f}^{{±{ci:.2f}}}"


def format_report_table(rows: dict[str, EvalReport]) -> str:
    """Rows of value^{±ci} cells under the usual five metric columns."""
    headers = [COLUMN_HEADERS[c] for c in METRIC_COLUMNS]
    table = [["" ] + headers]
    for name, report in rows.items():
        table.append([name] + [format_cell(*getattr(report, c)) for c in METRIC_COLUMNS])
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    lines = []
    for r, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if r == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)


def _seed_metrics(gen_motions, recognizer, feat_train, feat_test, metric_rng,
                  diversity_pairs, multimodality_pairs) -> dict[str, float]:
    feats = extract_features(recognizer, gen_motions)
    return {
        "fid_train": fid(feat_train, feats),
        "fid_test": fid(feat_test, feats),
        "accuracy": accuracy(recognizer, gen_motions),
        "diversity": diversity(feats, diversity_pairs, metric_rng),
        "multimodality": multimodality(feats, pairs_per_class=multimodality_pairs,
                                       rng=metric_rng),
    }


def evaluate(
    model: MotionVAE,
    recognizer: MotionRecognizer,
    real_train: list[Motion],
    real_test: list[Motion],
    per_action_count: int = 20,
    seeds: int = 20,
    duration: int = 60,
    diversity_pairs: int = 200,
    multimodality_pairs: int = 20,
    base_seed: int = 0,
) -> EvalReport:
    """Generate `seeds` balanced sets and aggregate all metrics with 95% CIs."""
    if recognizer.num_actions != model.config.num_actions:
        raise ActionSetMismatch(
            f"recognizer has {recognizer.num_actions} actions, model "
            f"{model.config.num_actions}"
        )
    feat_train = extract_features(recognizer, real_train, "real_train")
    feat_test = extract_features(recognizer, real_test, "real_test")
    actions = [a for a in range(model.config.num_actions) for _ in range(per_action_count)]
    per_seed: dict[str, list[float]] = {k: [] for k in METRIC_COLUMNS}
    for s in range(seeds):
        gen = torch.Generator().manual_seed(base_seed * 100003 + s)
        motions = model.generate_batch(actions, duration, generator=gen)
        metric_rng = np.random.default_rng(base_seed * 100003 + s)
        metrics = _seed_metrics(motions, recognizer, feat_train, feat_test, metric_rng,
                                diversity_pairs, multimodality_pairs)
        for k, v in metrics.items():
            per_seed[k].append(v)
    return EvalReport.from_per_seed(per_seed)


def evaluate_real(
    recognizer: MotionRecognizer,
    real_train: list[Motion],
    real_test: list[Motion],
    per_action_count: int = 20,
    seeds: int = 20,
    diversity_pairs: int = 200,
    multimodality_pairs: int = 20,
    base_seed: int = 0,
) -> EvalReport:
    """The "Real" reference row: per seed, score a balanced sample of the
    real test split against both real splits."""
    feat_train = extract_features(recognizer, real_train, "real_train")
    feat_test = extract_features(recognizer, real_test, "real_test")
    by_action: dict[int, list[Motion]] = {}
    for motion in real_test:
        by_action.setdefault(motion.action, []).append(motion)
    per_seed: dict[str, list[float]] = {k: [] for k in METRIC_COLUMNS}
    for s in range(seeds):
        rng = np.random.default_rng(base_seed * 9176 + s)
        sample = [
            group[int(i)]
            for _, group in sorted(by_action.items())
            for i in rng.integers(0, len(group), size=per_action_count)
        ]
        metrics = _seed_metrics(sample, recognizer, feat_train, feat_test, rng,
                                diversity_pairs, multimodality_pairs)
        for k, v in metrics.items():
            per_seed[k].append(v)
    return EvalReport.from_per_seed(per_seed)
