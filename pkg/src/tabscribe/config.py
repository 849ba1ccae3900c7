"""Layered run configuration: YAML file, strict keys, per-stage sections."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

import yaml

from .domain import DomainError


class ConfigError(DomainError):
    pass


@dataclass
class SynthStage:
    kind: str = "cells"  # cells | pages
    out: str = "corpus"
    n_cells: int = 1000
    n_classes: int = 40
    digit_count: int = 3
    distribution: str = "long_tail"  # long_tail | uniform
    tail_mass: float = 0.10
    blank_fraction: float = 0.10
    text_fraction: float = 0.05
    diagonal_blank_fraction: float = 0.5
    crossed_out_fraction: float = 0.0
    noise: str = "clean"
    cell_height: int = 48
    cell_width: int = 128
    n_pages: int = 10
    code_rows: int = 30
    code_column: int = 3


@dataclass
class SplitStage:
    pages: str = "pages"  # directory of page images
    out: str = "cells"
    row_start: int = 1
    row_stride: int = 2
    column_bands: Optional[list[int]] = None
    min_coverage: float = 0.6
    band_px: int = 3
    merge_px: int = 8
    min_cell_px: int = 8
    inset_px: int = 2
    strip_px: int = 2
    min_hits: int = 3
    step_px: int = 10
    max_px: int = 50
    red_margin: int = 30


@dataclass
class PreprocessStage:
    manifest: str = "corpus/manifest.jsonl"
    target_height: int = 48
    target_width: int = 128


@dataclass
class SegmentStage:
    manifest: str = "corpus/manifest.jsonl"
    out: str = "digits"
    min_weight: float = 0.10
    min_sep_frac: float = 0.12
    digit_height: int = 32
    digit_width: int = 32


@dataclass
class TrainStage:
    manifest: str = "corpus/manifest.jsonl"
    preset: str = "3digit-sequential"
    checkpoint: str = "model.ckpt"
    val_fraction: float = 0.10
    max_epochs: int = 50
    patience: int = 5
    batch_size: int = 64
    lr: Optional[float] = None
    time_budget_s: Optional[float] = None
    input_height: Optional[int] = None
    input_width: Optional[int] = None


@dataclass
class PredictStage:
    manifest: str = "corpus/manifest.jsonl"
    checkpoint: str = "model.ckpt"
    out: str = "predictions.jsonl"


@dataclass
class DecideStage:
    predictions: str = "predictions.jsonl"
    truth_manifest: Optional[str] = None
    threshold: Optional[float] = None
    human_error_rate: float = 0.03
    grid_step: float = 0.01
    max_manual_fraction: float = 0.05
    max_total_error: float = 0.03
    out: str = "decisions"


@dataclass
class EvaluateStage:
    predictions: str = "predictions.jsonl"
    truth_manifest: str = "corpus/manifest.jsonl"
    deviation_factor: float = 2.0
    min_support: int = 5
    top_k: int = 10
    out: str = "evaluation"


@dataclass
class ShiftStage:
    manifest_a: str = "a/manifest.jsonl"
    manifest_b: str = "b/manifest.jsonl"
    input_height: int = 32
    input_width: int = 32
    epochs: int = 12
    batch_size: int = 64
    lr: float = 1e-3


@dataclass
class CrossValidateStage:
    manifest: str = "corpus/manifest.jsonl"
    preset: str = "3digit-sequential"
    k: int = 5
    max_epochs: int = 10
    batch_size: int = 64
    lr: Optional[float] = None
    input_height: Optional[int] = None
    input_width: Optional[int] = None
    out: str = "crossval"


@dataclass
class ServeStage:
    journal: str = "journal.jsonl"
    host: str = "127.0.0.1"
    port: int = 8731
    image_root: str = "."
    static_dir: Optional[str] = None
    lease_seconds: float = 600.0
    batch_size: int = 50


@dataclass
class ExportStage:
    journal: str = "journal.jsonl"
    out: str = "verified/manifest.jsonl"


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    out: str = "runs/latest"
    schema: str = "occupation"
    synth: SynthStage = field(default_factory=SynthStage)
    split: SplitStage = field(default_factory=SplitStage)
    preprocess: PreprocessStage = field(default_factory=PreprocessStage)
    segment: SegmentStage = field(default_factory=SegmentStage)
    train: TrainStage = field(default_factory=TrainStage)
    predict: PredictStage = field(default_factory=PredictStage)
    decide: DecideStage = field(default_factory=DecideStage)
    evaluate: EvaluateStage = field(default_factory=EvaluateStage)
    shift: ShiftStage = field(default_factory=ShiftStage)
    crossval: CrossValidateStage = field(default_factory=CrossValidateStage)
    serve: ServeStage = field(default_factory=ServeStage)
    export: ExportStage = field(default_factory=ExportStage)


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {path or 'root'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config key(s) at {path or 'root'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        if is_dataclass(f.type) if isinstance(f.type, type) else False:
            kwargs[name] = _build(f.type, value or {}, f"{path}.{name}" if path else name)
        elif isinstance(value, dict):
            sub = f.default_factory() if f.default_factory is not dataclasses.MISSING else None
            if sub is not None and is_dataclass(sub):
                kwargs[name] = _build(type(sub), value, f"{path}.{name}" if path else name)
            else:
                raise ConfigError(f"unexpected mapping at {path}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path: Optional[str | Path] = None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    return _build(RunConfig, data, "")


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
