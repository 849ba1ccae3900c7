"""The three model presets, their training loops, and confidence-scored prediction."""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .domain import BLANK, TEXT, CellId, CellImage, ColumnSchema, DatasetManifest, DomainError, resolve_image_path
from .digitseg import SegmentationOutcome
from .neuro import (
    Adam,
    CollapseToSequence,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    Lstm,
    MaxPool2x2,
    Network,
    NumericsError,
    Standardize,
    ctc_greedy_decode,
    ctc_loss,
    load_checkpoint,
    save_checkpoint,
    softmax,
    sparse_ce,
    train_step,
)
from .preprocess import TARGET_1DIGIT, TARGET_3DIGIT, load_cell_png, preprocess

# Character classes for the sequence model: ten digits, blank-image class,
# text class, and the CTC spacing pseudo-blank (always last).
CTC_BLANK = "-"
ALPHABET: tuple[str, ...] = tuple("0123456789") + (BLANK, TEXT, CTC_BLANK)
BLANK_INDEX = len(ALPHABET) - 1
_CHAR_TO_INDEX = {c: i for i, c in enumerate(ALPHABET)}


class ConfigError(DomainError):
    pass


class ArchPreset(str, Enum):
    THREE_BY_ONE = "3x1"
    THREE_DIGIT = "3digit"
    THREE_DIGIT_SEQUENTIAL = "3digit-sequential"


PRESET_LR = {
    ArchPreset.THREE_BY_ONE: 1e-4,
    ArchPreset.THREE_DIGIT: 1e-3,
    ArchPreset.THREE_DIGIT_SEQUENTIAL: 3e-3,
}

PRESET_INPUT_HW = {
    ArchPreset.THREE_BY_ONE: TARGET_1DIGIT,
    ArchPreset.THREE_DIGIT: TARGET_3DIGIT,
    ArchPreset.THREE_DIGIT_SEQUENTIAL: TARGET_3DIGIT,
}


@dataclass
class BuiltModel:
    preset: ArchPreset
    net: Network
    vocab: tuple[str, ...]
    input_hw: tuple[int, int]
    digit_count: int
    lr: float
    seed: int
    checkpoint_id: str = "unsaved"

    @property
    def is_sequential(self) -> bool:
        return self.preset is ArchPreset.THREE_DIGIT_SEQUENTIAL


def build(
    preset: ArchPreset,
    schema: ColumnSchema,
    vocab: Optional[Sequence[str]] = None,
    seed: int = 0,
    input_hw: Optional[tuple[int, int]] = None,
    dtype=np.float32,
) -> BuiltModel:
    """Instantiate one of the three presets for the given column schema."""
    preset = ArchPreset(preset)
    hw = input_hw or PRESET_INPUT_HW[preset]
    in_shape = (hw[0], hw[1], 1)

    if preset is ArchPreset.THREE_BY_ONE:
        classes = tuple(str(d) for d in range(10))
        layers = [
            Standardize(),
            Conv2d(32), MaxPool2x2(),
            Conv2d(64), MaxPool2x2(),
            Conv2d(128), MaxPool2x2(),
            Conv2d(128), MaxPool2x2(),
            Flatten(),
            Dense(512, activation="relu"),
            Dense(len(classes)),
        ]
    elif preset is ArchPreset.THREE_DIGIT:
        if not vocab:
            raise ConfigError("3digit preset requires a nonempty code vocabulary")
        classes = tuple(sorted(set(vocab)))
        layers = [
            Standardize(),
            Conv2d(32), MaxPool2x2(),
            Conv2d(64), MaxPool2x2(),
            Conv2d(128), MaxPool2x2(),
            Conv2d(128), MaxPool2x2(),
            Conv2d(256), MaxPool2x2(),
            Flatten(),
            Dense(512, activation="relu"),
            Dense(256, activation="relu"),
            Dense(len(classes)),
        ]
    else:
        classes = ALPHABET
        layers = [
            Standardize(),
            Conv2d(32), MaxPool2x2(),
            Conv2d(64), MaxPool2x2(),
            CollapseToSequence(),
            Dense(64, activation="relu"),
            Dropout(0.20),
            Lstm(128),
            Lstm(128),
            Dense(len(ALPHABET)),
        ]

    net = Network(layers, in_shape, seed=seed, dtype=dtype)
    return BuiltModel(
        preset=preset,
        net=net,
        vocab=classes,
        input_hw=hw,
        digit_count=schema.digit_count,
        lr=PRESET_LR[preset],
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Prediction types


@dataclass(frozen=True)
class SequencePrediction:
    """Decoded sequence with one confidence per emitted character.

    ``value`` is the canonical label ("042", blank or text class) or None
    when the decode is malformed for the schema (wrong length, mixed chars,
    empty); the raw collapsed decode is kept for diagnostics either way.
    """

    cell_id: CellId
    value: Optional[str]
    raw: str
    confidences: tuple[float, ...]
    checkpoint_id: str = "unsaved"

    @property
    def is_malformed(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class ClassConfidence:
    cell_id: CellId
    class_index: int
    label: str
    confidence: float
    distribution: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class ManualRoute:
    """A cell that bypasses the model entirely and must go to a human."""

    cell_id: CellId
    reason: str


def _canonical_decode(raw: str, digit_count: int) -> Optional[str]:
    if raw == BLANK or raw == TEXT:
        return raw
    if len(raw) == digit_count and raw.isdigit():
        return raw
    return None


def predict(model: BuiltModel, cell: CellImage):
    """Predict one preprocessed cell: SequencePrediction for the sequential
    preset, ClassConfidence for the one-to-one presets."""
    x = cell.pixels.astype(np.float32)[None, :, :, None]
    logits = model.net.forward(x, training=False)[0]
    if model.is_sequential:
        seq, conf = ctc_greedy_decode(logits, blank=BLANK_INDEX)
        raw = "".join(ALPHABET[k] for k in seq)
        return SequencePrediction(
            cell_id=cell.id,
            value=_canonical_decode(raw, model.digit_count),
            raw=raw,
            confidences=tuple(conf),
            checkpoint_id=model.checkpoint_id,
        )
    probs = softmax(logits.astype(np.float64))
    k = int(np.argmax(probs))
    return ClassConfidence(
        cell_id=cell.id,
        class_index=k,
        label=model.vocab[k],
        confidence=float(probs[k]),
        distribution=tuple(float(p) for p in probs),
    )


def predict_batch(model: BuiltModel, cells: Sequence[CellImage]) -> list:
    """Batched variant of predict (same outputs, one forward pass)."""
    if not cells:
        return []
    x = np.stack([c.pixels for c in cells]).astype(np.float32)[:, :, :, None]
    logits = model.net.forward(x, training=False)
    out = []
    for cell, lg in zip(cells, logits):
        if model.is_sequential:
            seq, conf = ctc_greedy_decode(lg, blank=BLANK_INDEX)
            raw = "".join(ALPHABET[k] for k in seq)
            out.append(
                SequencePrediction(
                    cell_id=cell.id,
                    value=_canonical_decode(raw, model.digit_count),
                    raw=raw,
                    confidences=tuple(conf),
                    checkpoint_id=model.checkpoint_id,
                )
            )
        else:
            probs = softmax(lg.astype(np.float64))
            k = int(np.argmax(probs))
            out.append(
                ClassConfidence(
                    cell_id=cell.id,
                    class_index=k,
                    label=model.vocab[k],
                    confidence=float(probs[k]),
                    distribution=tuple(float(p) for p in probs),
                )
            )
    return out


def compose_3x1(outcome: SegmentationOutcome, digit_model: BuiltModel):
    """Concatenate three per-digit predictions into one code prediction.

    Unsegmentable cells are routed straight to manual verification.
    """
    if not outcome.is_split:
        return ManualRoute(cell_id=outcome.cell_id, reason="unsegmentable")
    preds = predict_batch(digit_model, list(outcome.crops))
    code = "".join(p.label for p in preds)
    return SequencePrediction(
        cell_id=outcome.cell_id,
        value=code,
        raw=code,
        confidences=tuple(p.confidence for p in preds),
        checkpoint_id=digit_model.checkpoint_id,
    )


# ---------------------------------------------------------------------------
# Dataset assembly


def encode_sequence_target(value: str) -> list[int]:
    return [_CHAR_TO_INDEX[c] for c in value]


def load_examples(
    manifest: DatasetManifest,
    manifest_path: str | Path,
    input_hw: tuple[int, int],
) -> tuple[np.ndarray, list[str], list[CellId]]:
    """Load, preprocess, and stack every labeled manifest entry."""
    xs, labels, ids = [], [], []
    for e in manifest.entries:
        lab = e.resolved_label
        if lab is None:
            raise DomainError(f"entry {e.cell_id} has no resolvable label")
        cell = load_cell_png(resolve_image_path(manifest_path, e), e.cell_id)
        xs.append(preprocess(cell, input_hw).pixels.astype(np.float32))
        labels.append(lab)
        ids.append(e.cell_id)
    x = np.stack(xs)[:, :, :, None] if xs else np.zeros((0, *input_hw, 1), np.float32)
    return x, labels, ids


def _encode_targets(model: BuiltModel, labels: Sequence[str]):
    if model.is_sequential:
        return [encode_sequence_target(v) for v in labels]
    index = {v: i for i, v in enumerate(model.vocab)}
    keep, ys = [], []
    for i, v in enumerate(labels):
        if v in index:
            keep.append(i)
            ys.append(index[v])
        else:
            warnings.warn(f"label {v!r} not in model vocabulary; example dropped", stacklevel=2)
    return np.asarray(ys, dtype=np.int64), keep


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    patience: int = 5
    batch_size: int = 64
    seed: int = 0
    lr: Optional[float] = None
    time_budget_s: Optional[float] = None


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    seconds: float


def _decode_values(model: BuiltModel, logits: np.ndarray) -> list[str]:
    vals = []
    for lg in logits:
        if model.is_sequential:
            seq, _ = ctc_greedy_decode(lg, blank=BLANK_INDEX)
            vals.append("".join(ALPHABET[k] for k in seq))
        else:
            vals.append(model.vocab[int(np.argmax(lg))])
    return vals


def evaluate_loss(model: BuiltModel, x: np.ndarray, labels: Sequence[str], batch_size: int = 256):
    """Mean loss and exact-match accuracy in inference mode."""
    n = x.shape[0]
    total_loss, correct, counted = 0.0, 0, 0
    for i in range(0, n, batch_size):
        xb = x[i : i + batch_size]
        lb = labels[i : i + batch_size]
        logits = model.net.forward(xb, training=False)
        if model.is_sequential:
            for lg, val in zip(logits, lb):
                total_loss += ctc_loss(lg, encode_sequence_target(val))
                counted += 1
        else:
            ys, keep = _encode_targets(model, lb)
            if len(keep) != len(lb):
                raise DomainError("evaluation labels outside model vocabulary")
            total_loss += sparse_ce(logits, ys) * len(lb)
            counted += len(lb)
        for dec, val in zip(_decode_values(model, logits), lb):
            correct += int(dec == val)
    return total_loss / max(counted, 1), correct / max(n, 1)


class TrainingAborted(NumericsError):
    def __init__(self, msg: str, last_good: Optional[BuiltModel]):
        super().__init__(msg)
        self.last_good = last_good


def train(
    model: BuiltModel,
    train_x: np.ndarray,
    train_labels: Sequence[str],
    val_x: np.ndarray,
    val_labels: Sequence[str],
    cfg: TrainConfig = TrainConfig(),
) -> tuple[BuiltModel, list[EpochStats]]:
    """Mini-batch Adam training with early stopping on validation loss.

    Deterministic for a fixed config: shuffling and dropout masks derive
    from ``cfg.seed``. Returns the model restored to its best-validation
    parameters, plus per-epoch history.
    """
    rng = np.random.default_rng(cfg.seed)
    model.net.reseed(cfg.seed + 1)
    lr = cfg.lr if cfg.lr is not None else model.lr
    adam = Adam(model.net.parameters(), lr=lr)

    if model.is_sequential:
        targets_all = [encode_sequence_target(v) for v in train_labels]
        x_all, labels_all = train_x, list(train_labels)
    else:
        ys, keep = _encode_targets(model, train_labels)
        x_all = train_x[keep]
        labels_all = [train_labels[i] for i in keep]
        targets_all = ys

    n = x_all.shape[0]
    if n == 0:
        raise ConfigError("no trainable examples")
    # per-epoch train accuracy is estimated on a fixed subsample to keep
    # evaluation overhead bounded on large corpora
    acc_idx = np.random.default_rng(cfg.seed + 2).permutation(n)[: min(n, 1500)]

    history: list[EpochStats] = []
    best_val = np.inf
    best_params = [p.value.copy() for p in model.net.parameters()]
    since_best = 0
    t_start = time.monotonic()

    def snapshot_restore(params):
        for p, saved in zip(model.net.parameters(), params):
            p.value[...] = saved

    loss_kind = "ctc" if model.is_sequential else "ce"
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.monotonic()
            perm = rng.permutation(n)
            epoch_loss, seen = 0.0, 0
            train_correct = 0
            for i in range(0, n, cfg.batch_size):
                idx = perm[i : i + cfg.batch_size]
                xb = x_all[idx]
                if model.is_sequential:
                    tb = [targets_all[j] for j in idx]
                else:
                    tb = targets_all[idx]
                loss = train_step(model.net, xb, tb, adam, loss_kind=loss_kind)
                epoch_loss += loss * len(idx)
                seen += len(idx)
            train_loss = epoch_loss / seen
            # accuracy measured post-epoch in inference mode
            _, train_acc = evaluate_loss(model, x_all[acc_idx], [labels_all[i] for i in acc_idx])
            val_loss, val_acc = evaluate_loss(model, val_x, val_labels)
            history.append(
                EpochStats(epoch, train_loss, train_acc, val_loss, val_acc, time.monotonic() - t0)
            )
            if val_loss < best_val:
                best_val = val_loss
                best_params = [p.value.copy() for p in model.net.parameters()]
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break
            if cfg.time_budget_s is not None and time.monotonic() - t_start > cfg.time_budget_s:
                break
    except NumericsError as e:
        snapshot_restore(best_params)
        raise TrainingAborted(str(e), last_good=model) from e

    snapshot_restore(best_params)
    return model, history


# ---------------------------------------------------------------------------
# Checkpoint persistence


def save_model(model: BuiltModel, path: str | Path, train_config: Optional[dict] = None) -> str:
    tensors = [p.value for p in model.net.parameters()]
    digest = hashlib.sha256()
    for t in tensors:
        digest.update(np.ascontiguousarray(t, dtype="<f4").tobytes())
    checkpoint_id = digest.hexdigest()[:16]
    header = {
        "preset": model.preset.value,
        "arch": model.net.layer_specs(),
        "vocab": list(model.vocab),
        "input_hw": list(model.input_hw),
        "digit_count": model.digit_count,
        "lr": model.lr,
        "seed": model.seed,
        "train_config": train_config or {},
        "checkpoint_id": checkpoint_id,
    }
    save_checkpoint(path, header, tensors)
    model.checkpoint_id = checkpoint_id
    return checkpoint_id


def load_model(path: str | Path, schema: ColumnSchema) -> BuiltModel:
    header, tensors = load_checkpoint(path)
    preset = ArchPreset(header["preset"])
    model = build(
        preset,
        schema,
        vocab=header["vocab"] if preset is ArchPreset.THREE_DIGIT else None,
        seed=header["seed"],
        input_hw=tuple(header["input_hw"]),
    )
    if tuple(header["vocab"]) != model.vocab:
        raise ConfigError("checkpoint vocabulary does not match rebuilt model")
    params = model.net.parameters()
    if len(params) != len(tensors):
        raise ConfigError("checkpoint parameter count mismatch")
    for p, t in zip(params, tensors):
        if p.value.shape != t.shape:
            raise ConfigError(f"checkpoint tensor shape {t.shape} != {p.value.shape}")
        p.value[...] = t
    model.digit_count = header["digit_count"]
    model.checkpoint_id = header["checkpoint_id"]
    return model


# ---------------------------------------------------------------------------
# Prediction export (the interface consumed by decide and evaluate)


def prediction_record(pred) -> dict:
    if isinstance(pred, ManualRoute):
        return {
            "cell_id": str(pred.cell_id),
            "value": None,
            "raw": "",
            "confidences": [],
            "checkpoint": "",
            "reason": pred.reason,
        }
    if isinstance(pred, ClassConfidence):
        return {
            "cell_id": str(pred.cell_id),
            "value": pred.label,
            "raw": pred.label,
            "confidences": [pred.confidence],
            "checkpoint": "",
            "reason": None,
        }
    return {
        "cell_id": str(pred.cell_id),
        "value": pred.value,
        "raw": pred.raw,
        "confidences": list(pred.confidences),
        "checkpoint": pred.checkpoint_id,
        "reason": "malformed" if pred.is_malformed else None,
    }


def write_predictions(preds: Sequence, path: str | Path) -> None:
    records = sorted((prediction_record(p) for p in preds), key=lambda r: r["cell_id"])
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_predictions(path: str | Path):
    """Reconstruct SequencePrediction / ManualRoute values from an export."""
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            cid = CellId.parse(rec["cell_id"])
            if rec["reason"] == "unsegmentable":
                out.append(ManualRoute(cell_id=cid, reason=rec["reason"]))
            else:
                out.append(
                    SequencePrediction(
                        cell_id=cid,
                        value=rec["value"],
                        raw=rec["raw"],
                        confidences=tuple(rec["confidences"]),
                        checkpoint_id=rec.get("checkpoint", ""),
                    )
                )
    return out
