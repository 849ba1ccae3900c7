"""Metrics, confusion analysis, distribution comparison, k-fold CV, shift detection."""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .domain import DatasetManifest, DomainError, stratified_split
from .models import ArchPreset, BuiltModel, TrainConfig, build, predict_batch, train
from .neuro import Conv2d, Dense, Flatten, MaxPool2x2, Network


class InputError(DomainError):
    pass


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    support: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float  # macro
    recall: float  # macro
    f1: float  # macro
    per_class: tuple[ClassMetrics, ...]

    @property
    def n(self) -> int:
        return sum(c.support for c in self.per_class)


def metrics(predictions: Sequence[str], ground_truth: Sequence[str]) -> MetricsReport:
    """Accuracy plus macro-averaged precision/recall/F1 over the classes
    present in the ground truth. Classes never predicted get precision 0."""
    if len(predictions) != len(ground_truth):
        raise InputError(
            f"predictions ({len(predictions)}) and ground truth ({len(ground_truth)}) differ"
        )
    if not ground_truth:
        raise InputError("empty inputs")
    classes = sorted(set(ground_truth))
    tp = Counter()
    pred_count = Counter(predictions)
    true_count = Counter(ground_truth)
    correct = 0
    for p, g in zip(predictions, ground_truth):
        if p == g:
            tp[g] += 1
            correct += 1
    per_class = []
    for cls in classes:
        prec = tp[cls] / pred_count[cls] if pred_count[cls] else 0.0
        rec = tp[cls] / true_count[cls]
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        per_class.append(ClassMetrics(cls, true_count[cls], prec, rec, f1))
    return MetricsReport(
        accuracy=correct / len(ground_truth),
        precision=float(np.mean([c.precision for c in per_class])),
        recall=float(np.mean([c.recall for c in per_class])),
        f1=float(np.mean([c.f1 for c in per_class])),
        per_class=tuple(per_class),
    )


def confusion_pairs(
    predictions: Sequence[str], ground_truth: Sequence[str], top_k: int = 10
) -> list[tuple[str, str, int]]:
    """Most frequent (true, predicted) confusions, character-level where the
    labels are equal-length codes, whole-label otherwise."""
    if len(predictions) != len(ground_truth):
        raise InputError("length mismatch")
    counts: Counter = Counter()
    for p, g in zip(predictions, ground_truth):
        if p == g:
            continue
        if len(p) == len(g) and p.isdigit() and g.isdigit():
            for pc, gc in zip(p, g):
                if pc != gc:
                    counts[(gc, pc)] += 1
        else:
            counts[(g, p)] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(t, p, c) for (t, p), c in ranked[:top_k]]


@dataclass(frozen=True)
class DistributionComparison:
    classes: tuple[str, ...]
    reference_freq: tuple[float, ...]
    predicted_freq: tuple[float, ...]
    tv_distance: float
    deviating: tuple[str, ...]

    def scatter_points(self) -> list[tuple[str, float, float]]:
        return list(zip(self.classes, self.reference_freq, self.predicted_freq))


def distribution_compare(
    reference_labels: Sequence[str],
    predicted_labels: Sequence[str],
    deviation_factor: float = 2.0,
    min_support: int = 5,
) -> DistributionComparison:
    """Compare class frequency vectors: total variation distance plus the
    classes whose frequency ratio exceeds ``deviation_factor`` (with at
    least ``min_support`` observations on one side)."""
    if not reference_labels or not predicted_labels:
        raise InputError("both label collections must be nonempty")
    ref = Counter(reference_labels)
    pred = Counter(predicted_labels)
    classes = sorted(set(ref) | set(pred))
    p = np.array([ref[c] for c in classes], dtype=np.float64)
    q = np.array([pred[c] for c in classes], dtype=np.float64)
    p /= p.sum()
    q /= q.sum()
    tv = 0.5 * float(np.abs(p - q).sum())
    deviating = []
    for i, cls in enumerate(classes):
        if max(ref[cls], pred[cls]) < min_support:
            continue
        hi = max(p[i], q[i])
        lo = min(p[i], q[i])
        ratio = np.inf if lo == 0 else hi / lo
        if ratio > deviation_factor:
            deviating.append(cls)
    return DistributionComparison(
        classes=tuple(classes),
        reference_freq=tuple(float(v) for v in p),
        predicted_freq=tuple(float(v) for v in q),
        tv_distance=tv,
        deviating=tuple(deviating),
    )


# ---------------------------------------------------------------------------
# k-fold cross validation


def stratified_folds(labels: Sequence[str], k: int, seed: int) -> list[np.ndarray]:
    """Deterministic stratified k-fold assignment; classes smaller than k are
    pinned to the training side (never appear in any test fold)."""
    if k < 2:
        raise InputError("k must be >= 2")
    by_class: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(lab, []).append(i)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in sorted(by_class):
        idx = np.array(by_class[cls])
        if len(idx) < k:
            warnings.warn(f"class {cls!r} smaller than k={k}; pinned to train folds", stacklevel=2)
            continue
        idx = idx[rng.permutation(len(idx))]
        for j, i in enumerate(idx):
            folds[j % k].append(int(i))
    return [np.array(sorted(f)) for f in folds]


@dataclass(frozen=True)
class CrossValidationResult:
    reports: tuple[MetricsReport, ...]
    mean_accuracy: float
    std_accuracy: float


def cross_validate(
    preset: ArchPreset,
    x: np.ndarray,
    labels: Sequence[str],
    schema,
    k: int = 5,
    seed: int = 0,
    train_cfg: Optional[TrainConfig] = None,
    input_hw: Optional[tuple[int, int]] = None,
) -> CrossValidationResult:
    """Train one model per fold from scratch (fold-specific seeds) and report
    held-out metrics per fold plus the mean/stddev accuracy."""
    folds = stratified_folds(labels, k, seed)
    labels = list(labels)
    vocab = sorted({v for v in labels if v.isdigit()})
    reports = []
    for j, test_idx in enumerate(folds):
        test_set = set(test_idx.tolist())
        train_idx = np.array([i for i in range(len(labels)) if i not in test_set])
        cfg = train_cfg or TrainConfig()
        cfg = TrainConfig(
            max_epochs=cfg.max_epochs,
            patience=cfg.patience,
            batch_size=cfg.batch_size,
            seed=seed * 1000 + j,
            lr=cfg.lr,
            time_budget_s=cfg.time_budget_s,
        )
        model = build(preset, schema, vocab=vocab, seed=cfg.seed, input_hw=input_hw)
        tr_labels = [labels[i] for i in train_idx]
        te_labels = [labels[i] for i in test_idx]
        model, _ = train(model, x[train_idx], tr_labels, x[test_idx], te_labels, cfg)
        preds = predict_batch(model, _as_cells(x[test_idx]))
        pred_values = [_pred_value(p) for p in preds]
        reports.append(metrics(pred_values, te_labels))
    accs = [r.accuracy for r in reports]
    return CrossValidationResult(
        reports=tuple(reports),
        mean_accuracy=float(np.mean(accs)),
        std_accuracy=float(np.std(accs)),
    )


def _as_cells(x: np.ndarray):
    from .domain import CellId, CellImage

    return [
        CellImage(id=CellId("eval", i, 0), pixels=x[i, :, :, 0], state="preprocessed")
        for i in range(x.shape[0])
    ]


def _pred_value(p) -> str:
    from .models import ClassConfidence

    if isinstance(p, ClassConfidence):
        return p.label
    return p.value if p.value is not None else f"?{p.raw}"


# ---------------------------------------------------------------------------
# Dataset shift test


@dataclass(frozen=True)
class ShiftReport:
    f1_a: float
    f1_b: float
    split_seed: int
    n_train: int
    n_test: int


@dataclass(frozen=True)
class ShiftConfig:
    # trained until the classifier memorizes its training split: a no-signal
    # comparison then yields balanced chance-level test predictions instead
    # of a single-class collapse
    input_hw: tuple[int, int] = (32, 32)
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    test_fraction: float = 0.2


def _shift_classifier(input_hw: tuple[int, int], seed: int) -> Network:
    # the smallest one-to-one conv stack with a binary head
    layers = [
        Conv2d(32), MaxPool2x2(),
        Conv2d(64), MaxPool2x2(),
        Conv2d(128), MaxPool2x2(),
        Conv2d(128), MaxPool2x2(),
        Flatten(),
        Dense(512, activation="relu"),
        Dense(2),
    ]
    return Network(layers, (input_hw[0], input_hw[1], 1), seed=seed)


def shift_test(x_a: np.ndarray, x_b: np.ndarray, cfg: ShiftConfig = ShiftConfig()) -> ShiftReport:
    """Two-sample test: can a binary classifier tell sample A from sample B?

    Images are resized to a common input, split 80/20 stratified by source,
    and the held-out per-class F1 scores are reported. Near-chance F1 means
    the samples are indistinguishable; high F1 on both means dataset shift.
    """
    from .neuro import Adam, sparse_ce_with_grad, train_step

    n_a, n_b = x_a.shape[0], x_b.shape[0]
    if n_a == 0 or n_b == 0:
        raise InputError("both samples must be nonempty")
    if abs(n_a - n_b) > 0.1 * max(n_a, n_b):
        raise InputError(f"sample sizes differ by more than 10%: {n_a} vs {n_b}")

    rng = np.random.default_rng(cfg.seed)
    x = np.concatenate([x_a, x_b])
    y = np.concatenate([np.zeros(n_a, np.int64), np.ones(n_b, np.int64)])

    test_idx = []
    train_idx = []
    for cls, n_cls in ((0, n_a), (1, n_b)):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(cfg.test_fraction * n_cls))
        test_idx.extend(idx[:n_test].tolist())
        train_idx.extend(idx[n_test:].tolist())
    train_idx = np.array(sorted(train_idx))
    test_idx = np.array(sorted(test_idx))

    net = _shift_classifier(cfg.input_hw, cfg.seed)
    adam = Adam(net.parameters(), lr=cfg.lr)
    xt, yt = x[train_idx], y[train_idx]
    order_rng = np.random.default_rng(cfg.seed + 1)
    for _ in range(cfg.epochs):
        perm = order_rng.permutation(len(xt))
        for i in range(0, len(xt), cfg.batch_size):
            sel = perm[i : i + cfg.batch_size]
            train_step(net, xt[sel], yt[sel], adam, loss_kind="ce")

    logits = []
    for i in range(0, len(test_idx), 256):
        logits.append(net.forward(x[test_idx[i : i + 256]], training=False))
    pred = np.argmax(np.concatenate(logits), axis=1)
    truth = y[test_idx]

    def f1_for(cls: int) -> float:
        tp = int(((pred == cls) & (truth == cls)).sum())
        fp = int(((pred == cls) & (truth != cls)).sum())
        fn = int(((pred != cls) & (truth == cls)).sum())
        if tp == 0:
            return 0.0
        prec = tp / (tp + fp)
        rec = tp / (tp + fn)
        return 2 * prec * rec / (prec + rec)

    return ShiftReport(
        f1_a=f1_for(0),
        f1_b=f1_for(1),
        split_seed=cfg.seed,
        n_train=len(train_idx),
        n_test=len(test_idx),
    )


def shift_test_manifests(
    manifest_a: DatasetManifest,
    path_a,
    manifest_b: DatasetManifest,
    path_b,
    cfg: ShiftConfig = ShiftConfig(),
) -> ShiftReport:
    """Manifest-level wrapper with the data-leak guard: the same image file
    may not appear in both samples."""
    from .domain import resolve_image_path
    from .models import load_examples

    files_a = {str(resolve_image_path(path_a, e).resolve()) for e in manifest_a.entries}
    files_b = {str(resolve_image_path(path_b, e).resolve()) for e in manifest_b.entries}
    shared = files_a & files_b
    if shared:
        raise InputError(f"degenerate shift test: {len(shared)} image files appear in both samples")
    x_a, _, _ = load_examples(manifest_a, path_a, cfg.input_hw)
    x_b, _, _ = load_examples(manifest_b, path_b, cfg.input_hw)
    return shift_test(x_a, x_b, cfg)


def inject_brightness_gradient(x: np.ndarray, strength: float = 0.05) -> np.ndarray:
    """Additive left-to-right brightness ramp (a wear-and-tear style artifact)."""
    w = x.shape[2]
    ramp = (np.arange(w, dtype=np.float32) / max(w - 1, 1)) * strength
    return np.clip(x + ramp[None, None, :, None], 0.0, 1.0)
