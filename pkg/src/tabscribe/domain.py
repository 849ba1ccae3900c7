"""Core data types: column schemas, cell identities, labels, dataset manifests.

Everything here is an immutable value; instances can be shared freely across
concurrent pipeline stages.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

# Canonical label values for non-code cells. Codes are plain digit strings,
# so the single letters cannot collide with them.
BLANK = "B"
TEXT = "T"

_CELL_ID_RE = re.compile(r"^(?P<page>.+)_r(?P<row>\d+)_c(?P<col>\d+)$")
_CODE_RE = re.compile(r"^[0-9]+$")


class DomainError(ValueError):
    """Invalid domain value or malformed manifest."""


@dataclass(frozen=True)
class ColumnSchema:
    """What a questionnaire column may contain.

    ``valid_codes`` of ``None`` means any digit string of ``digit_count``
    digits is acceptable (open vocabulary).
    """

    name: str
    digit_count: int
    valid_codes: Optional[frozenset[str]] = None
    allows_blank: bool = True
    allows_text: bool = True

    def __post_init__(self):
        if self.digit_count < 1:
            raise DomainError(f"digit_count must be >= 1, got {self.digit_count}")
        if self.valid_codes is not None:
            object.__setattr__(self, "valid_codes", frozenset(self.valid_codes))
            for code in self.valid_codes:
                if len(code) != self.digit_count or not _CODE_RE.match(code):
                    raise DomainError(
                        f"schema {self.name!r}: code {code!r} is not a "
                        f"{self.digit_count}-digit string"
                    )

    def with_codes(self, codes: Iterable[str]) -> "ColumnSchema":
        return replace(self, valid_codes=frozenset(codes))


@dataclass(frozen=True, order=True)
class CellId:
    """Provenance of a cell: which page, row band, and column band it came from."""

    page_id: str
    row_index: int
    column_index: int

    def __post_init__(self):
        if self.row_index < 0 or self.column_index < 0:
            raise DomainError("row/column indices must be >= 0")
        if not self.page_id:
            raise DomainError("page_id must be nonempty")

    def __str__(self) -> str:
        return f"{self.page_id}_r{self.row_index}_c{self.column_index}"

    @classmethod
    def parse(cls, s: str) -> "CellId":
        m = _CELL_ID_RE.match(s)
        if not m:
            raise DomainError(f"not a cell id: {s!r}")
        return cls(m.group("page"), int(m.group("row")), int(m.group("col")))


@dataclass
class CellImage:
    """A grayscale cell crop. Pixel convention: float in [0, 1], 1.0 = ink.

    ``state`` tracks whether the image has been normalized for model input.
    """

    id: CellId
    pixels: np.ndarray
    source_box: tuple[int, int, int, int] = (0, 0, 0, 0)
    state: str = "raw"  # "raw" | "preprocessed"

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            if px.size == 0:
                raise DomainError("cell pixels must be non-empty")
            if px.dtype.kind == "f" and (px.min() < -1e-9 or px.max() > 1 + 1e-9):
                raise DomainError("grayscale cell pixels must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Label:
    """One human (or synthetic) label for a cell."""

    value: str  # digit string, BLANK, or TEXT
    labeler_id: str
    timestamp: str  # ISO-8601

    def to_record(self) -> dict:
        return {"value": self.value, "labeler_id": self.labeler_id, "timestamp": self.timestamp}

    @classmethod
    def from_record(cls, rec: dict) -> "Label":
        return cls(rec["value"], rec["labeler_id"], rec["timestamp"])


def validate_label(value: str, schema: ColumnSchema) -> bool:
    """True iff ``value`` is acceptable for the schema. Total function."""
    if value == BLANK:
        return schema.allows_blank
    if value == TEXT:
        return schema.allows_text
    if not isinstance(value, str) or not _CODE_RE.match(value):
        return False
    if len(value) != schema.digit_count:
        return False
    if schema.valid_codes is not None:
        return value in schema.valid_codes
    return True


def resolve_labels(labels: Sequence[Label]) -> Optional[str]:
    """Majority label value, or None on a tie (callers escalate ties)."""
    if not labels:
        return None
    counts: dict[str, int] = {}
    for lab in labels:
        counts[lab.value] = counts.get(lab.value, 0) + 1
    best = max(counts.values())
    winners = [v for v, c in counts.items() if c == best]
    return winners[0] if len(winners) == 1 else None


@dataclass(frozen=True)
class ManifestEntry:
    cell_id: CellId
    image: str  # path, relative to the manifest file when not absolute
    labels: tuple[Label, ...] = ()

    @property
    def resolved_label(self) -> Optional[str]:
        return resolve_labels(self.labels)


PROVENANCES = ("sample_2pct", "random_sample", "full", "verification", "synthetic")


@dataclass(frozen=True)
class DatasetManifest:
    schema: ColumnSchema
    entries: tuple[ManifestEntry, ...]
    provenance: str = "synthetic"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise DomainError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "entries", tuple(self.entries))
        seen: set[CellId] = set()
        for e in self.entries:
            if e.cell_id in seen:
                raise DomainError(f"duplicate cell id in manifest: {e.cell_id}")
            seen.add(e.cell_id)

    def __len__(self) -> int:
        return len(self.entries)

    def labeled_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.resolved_label is not None]


def write_manifest(manifest: DatasetManifest, path: str | Path, check_images: bool = True) -> None:
    """One record per line, sorted by cell id for reproducible diffs."""
    path = Path(path)
    records = []
    for e in sorted(manifest.entries, key=lambda e: str(e.cell_id)):
        if check_images:
            img = Path(e.image)
            if not img.is_absolute():
                img = path.parent / img
            if not img.exists():
                raise DomainError(f"manifest entry {e.cell_id}: image file missing: {img}")
        records.append(
            {
                "cell_id": str(e.cell_id),
                "image": e.image,
                "labels": [lab.to_record() for lab in e.labels],
                "provenance": manifest.provenance,
            }
        )
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_manifest(path: str | Path, schema: ColumnSchema) -> DatasetManifest:
    path = Path(path)
    entries = []
    provenance = "synthetic"
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            provenance = rec.get("provenance", provenance)
            entries.append(
                ManifestEntry(
                    cell_id=CellId.parse(rec["cell_id"]),
                    image=rec["image"],
                    labels=tuple(Label.from_record(r) for r in rec.get("labels", [])),
                )
            )
    return DatasetManifest(schema=schema, entries=tuple(entries), provenance=provenance)


def resolve_image_path(manifest_path: str | Path, entry: ManifestEntry) -> Path:
    img = Path(entry.image)
    return img if img.is_absolute() else Path(manifest_path).parent / img


def stratified_split(
    manifest: DatasetManifest, test_fraction: float, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Deterministic stratified split by resolved label.

    Per-class test counts are within one item of ``test_fraction`` times the
    class size, and the overall test size is within one item of the requested
    fraction (largest-remainder allocation). Classes with fewer than 2 items
    go entirely to train, with a warning.
    """
    if not 0 < test_fraction < 1:
        raise DomainError("test_fraction must be in (0, 1)")
    by_class: dict[str, list[ManifestEntry]] = {}
    for e in manifest.entries:
        lab = e.resolved_label
        if lab is None:
            raise DomainError(f"entry {e.cell_id} has no resolvable label")
        by_class.setdefault(lab, []).append(e)

    rng = np.random.default_rng(seed)
    train: list[ManifestEntry] = []
    test: list[ManifestEntry] = []

    eligible = {}
    for cls in sorted(by_class):
        items = sorted(by_class[cls], key=lambda e: str(e.cell_id))
        if len(items) < 2:
            warnings.warn(f"class {cls!r} has fewer than 2 items; kept in train", stacklevel=2)
            train.extend(items)
        else:
            eligible[cls] = items

    # Largest-remainder allocation: exact total, per-class within +/-1 of target.
    n_eligible = sum(len(v) for v in eligible.values())
    total_target = round(test_fraction * n_eligible)
    floors, remainders = {}, []
    for cls, items in eligible.items():
        t = test_fraction * len(items)
        floors[cls] = int(np.floor(t))
        remainders.append((-(t - floors[cls]), cls))
    short = total_target - sum(floors.values())
    for _, cls in sorted(remainders)[: max(short, 0)]:
        floors[cls] += 1

    for cls, items in eligible.items():
        k = min(floors[cls], len(items))
        perm = rng.permutation(len(items))
        chosen = set(perm[:k].tolist())
        for i, e in enumerate(items):
            (test if i in chosen else train).append(e)

    def mk(entries: list[ManifestEntry]) -> DatasetManifest:
        ordered = tuple(sorted(entries, key=lambda e: str(e.cell_id)))
        return DatasetManifest(manifest.schema, ordered, manifest.provenance)

    return mk(train), mk(test)


def _schema(name, digits, codes=None, blank=True, text=True) -> ColumnSchema:
    return ColumnSchema(name, digits, None if codes is None else frozenset(codes), blank, text)


def _range_codes(lo: int, hi: int, digits: int) -> list[str]:
    return [str(v).zfill(digits) for v in range(lo, hi + 1)]


# Shipped presets for the census columns with numeric codes. Columns whose
# code books are not enumerable (occupation, business, higher education)
# default to an open vocabulary; pipelines restrict them to the codes
# observed in training via ColumnSchema.with_codes.
PRESET_SCHEMAS: dict[str, ColumnSchema] = {
    s.name: s
    for s in [
        _schema("position_in_household", 1, _range_codes(1, 3, 1)),
        _schema("resident", 1, _range_codes(1, 5, 1)),
        _schema("marriage_status", 1, _range_codes(1, 7, 1)),
        _schema("employment", 1, _range_codes(1, 9, 1)),
        _schema("business", 3),
        _schema("lower_education", 1, _range_codes(1, 9, 1)),
        _schema("higher_education", 3),
        _schema("nationality", 2, _range_codes(1, 50, 2)),
        _schema("occupation", 3),
    ]
}
