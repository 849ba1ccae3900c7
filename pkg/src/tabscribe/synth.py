"""Deterministic synthetic data: digit glyphs, code cells, and full grid pages.

Glyphs are parametric stroke templates rendered with seeded affine jitter, so
the corpus is a pure function of its spec and carries exact ground truth
(glyph boxes, inter-digit gaps, ruling coordinates) for every test tier.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .domain import (
    BLANK,
    TEXT,
    CellId,
    CellImage,
    ColumnSchema,
    DatasetManifest,
    DomainError,
    Label,
    ManifestEntry,
    write_manifest,
)
from .preprocess import save_cell_png

NOISE_TIERS = ("clean", "moderate", "heavy")
SYNTH_TIMESTAMP = "1950-12-01T00:00:00Z"


def _arc(cx, cy, rx, ry, deg0, deg1, n=14):
    ts = np.linspace(math.radians(deg0), math.radians(deg1), n)
    return [(cx + rx * math.cos(t), cy + ry * math.sin(t)) for t in ts]


# Stroke templates in a unit box, x right, y down.
DIGIT_STROKES: dict[str, list[list[tuple[float, float]]]] = {
    "0": [_arc(0.50, 0.50, 0.30, 0.40, 0, 360, 18)],
    "1": [[(0.32, 0.24), (0.54, 0.08), (0.54, 0.92)]],
    "2": [
        _arc(0.50, 0.28, 0.29, 0.19, 180, 330, 10)
        + [(0.76, 0.40), (0.22, 0.90), (0.80, 0.90)]
    ],
    "3": [
        _arc(0.42, 0.30, 0.30, 0.19, -140, 90, 10),
        _arc(0.42, 0.67, 0.32, 0.21, -90, 140, 10),
    ],
    "4": [[(0.62, 0.08), (0.18, 0.60), (0.84, 0.60)], [(0.68, 0.08), (0.68, 0.92)]],
    "5": [
        [(0.76, 0.10), (0.28, 0.10), (0.26, 0.44)],
        _arc(0.45, 0.66, 0.30, 0.23, -120, 150, 12),
    ],
    "6": [
        _arc(0.58, 0.48, 0.33, 0.40, -70, -178, 10),
        _arc(0.46, 0.68, 0.22, 0.22, 0, 360, 14),
    ],
    "7": [[(0.20, 0.12), (0.80, 0.12), (0.42, 0.92)]],
    "8": [_arc(0.50, 0.30, 0.24, 0.20, 0, 360, 14), _arc(0.50, 0.70, 0.28, 0.22, 0, 360, 14)],
    "9": [_arc(0.52, 0.32, 0.26, 0.22, 0, 360, 14), [(0.78, 0.34), (0.72, 0.62), (0.56, 0.92)]],
}

# Letter-like templates for text cells and person rows.
LETTER_STROKES: list[list[list[tuple[float, float]]]] = [
    [[(0.30, 0.10), (0.30, 0.90)], _arc(0.52, 0.62, 0.22, 0.26, 100, 330, 10)],  # h-ish
    [_arc(0.50, 0.55, 0.26, 0.30, 40, 320, 12)],  # c-ish
    [[(0.20, 0.30), (0.35, 0.85), (0.52, 0.35), (0.68, 0.85), (0.82, 0.30)]],  # w-ish
    [[(0.50, 0.10), (0.50, 0.85)], [(0.28, 0.30), (0.72, 0.30)]],  # t-ish
    [_arc(0.50, 0.40, 0.22, 0.18, -200, 20, 10), _arc(0.50, 0.70, 0.22, 0.18, -20, 200, 10)],  # s-ish
]


def _transform(points, box, rng, max_shear_deg=10.0, scale_jitter=0.15):
    """Affine jitter in unit space, then map into the pixel box."""
    shear = math.tan(math.radians(rng.uniform(-max_shear_deg, max_shear_deg)))
    scale = 1.0 + rng.uniform(-scale_jitter, scale_jitter)
    dx, dy = rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04)
    x0, y0, x1, y1 = box
    w, h = x1 - x0, y1 - y0
    out = []
    for x, y in points:
        xs = 0.5 + ((x - 0.5) + shear * (y - 0.5)) * scale + dx
        ys = 0.5 + (y - 0.5) * scale + dy
        out.append((x0 + xs * w, y0 + ys * h))
    return out


def _draw_segment(canvas, p0, p1, width, intensity):
    h, w = canvas.shape
    r = width / 2.0 + 1.0
    xa = max(int(min(p0[0], p1[0]) - r), 0)
    xb = min(int(max(p0[0], p1[0]) + r) + 1, w)
    ya = max(int(min(p0[1], p1[1]) - r), 0)
    yb = min(int(max(p0[1], p1[1]) + r) + 1, h)
    if xa >= xb or ya >= yb:
        return
    ys, xs = np.mgrid[ya:yb, xa:xb]
    vx, vy = p1[0] - p0[0], p1[1] - p0[1]
    vv = vx * vx + vy * vy
    if vv < 1e-12:
        t = np.zeros_like(xs, dtype=np.float64)
    else:
        t = np.clip(((xs - p0[0]) * vx + (ys - p0[1]) * vy) / vv, 0.0, 1.0)
    d = np.hypot(xs - (p0[0] + t * vx), ys - (p0[1] + t * vy))
    cov = np.clip(width / 2.0 + 0.5 - d, 0.0, 1.0) * intensity
    np.maximum(canvas[ya:yb, xa:xb], cov, out=canvas[ya:yb, xa:xb])


def render_strokes(canvas, strokes, box, rng, width=None, intensity=None):
    """Render jittered strokes into ``canvas``; returns the tight pixel bbox."""
    width = width if width is not None else rng.uniform(1.6, 3.0)
    intensity = intensity if intensity is not None else rng.uniform(0.85, 1.0)
    min_x, min_y = canvas.shape[1], canvas.shape[0]
    max_x = max_y = 0.0
    for stroke in strokes:
        pts = _transform(stroke, box, rng)
        for p0, p1 in zip(pts, pts[1:]):
            _draw_segment(canvas, p0, p1, width, intensity)
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        min_x = min(min_x, min(xs) - width / 2)
        max_x = max(max_x, max(xs) + width / 2)
        min_y = min(min_y, min(ys) - width / 2)
        max_y = max(max_y, max(ys) + width / 2)
    return (
        max(min_x, 0.0),
        max(min_y, 0.0),
        min(max_x, canvas.shape[1] - 1.0),
        min(max_y, canvas.shape[0] - 1.0),
    )


def _apply_cell_noise(canvas, tier, rng):
    if tier == "clean":
        return canvas
    if tier == "moderate":
        canvas = canvas + rng.normal(0.0, 0.04, canvas.shape)
    elif tier == "heavy":
        canvas = canvas + rng.normal(0.0, 0.08, canvas.shape)
        spots = rng.random(canvas.shape) < 0.01
        canvas = np.where(spots, rng.random(canvas.shape), canvas)
    else:
        raise DomainError(f"unknown noise tier {tier!r}")
    return np.clip(canvas, 0.0, 1.0)


@dataclass(frozen=True)
class CellTruth:
    label: str
    glyph_boxes: tuple[tuple[float, float, float, float], ...] = ()
    gaps: tuple[float, ...] = ()
    has_diagonal: bool = False
    crossed_out: bool = False
    original_code: Optional[str] = None


@dataclass(frozen=True)
class GeneratedCell:
    image: CellImage
    truth: CellTruth


def gen_cell(
    label: str,
    cell_id: CellId,
    rng: np.random.Generator,
    cell_hw: tuple[int, int] = (48, 128),
    noise: str = "clean",
    diagonal: bool = False,
    crossed_out_code: Optional[str] = None,
) -> GeneratedCell:
    """Render one cell for ``label`` (a code, blank class, or text class).

    ``crossed_out_code`` renders that code struck through, with ``label``
    entered beside it (the correction is the ground truth).
    """
    h, w = cell_hw
    canvas = np.zeros((h, w), dtype=np.float64)
    boxes: list[tuple[float, float, float, float]] = []
    gaps: tuple[float, ...] = ()

    if label == BLANK:
        if diagonal:
            pts = [
                (w * rng.uniform(0.05, 0.15), h * rng.uniform(0.75, 0.92)),
                (w * rng.uniform(0.85, 0.95), h * rng.uniform(0.08, 0.25)),
            ]
            _draw_segment(canvas, pts[0], pts[1], rng.uniform(1.5, 2.5), rng.uniform(0.7, 1.0))
    elif label == TEXT:
        n_letters = int(rng.integers(3, 6))
        for i in range(n_letters):
            x0 = w * (0.08 + 0.84 * i / n_letters)
            x1 = w * (0.08 + 0.84 * (i + 0.8) / n_letters)
            box = (x0, h * 0.25, x1, h * 0.80)
            tpl = LETTER_STROKES[int(rng.integers(0, len(LETTER_STROKES)))]
            render_strokes(canvas, tpl, box, rng)
    else:
        if not label.isdigit():
            raise DomainError(f"cannot render label {label!r}")
        if crossed_out_code is not None:
            # the struck-out original sits low; the correction rides higher
            _render_code(canvas, crossed_out_code, rng, y_band=(0.38, 0.98), record=None)
            mid_y = h * rng.uniform(0.60, 0.72)
            _draw_segment(
                canvas, (w * 0.08, mid_y), (w * 0.92, mid_y), rng.uniform(1.5, 2.5), 0.9
            )
            boxes, gaps = _render_code(canvas, label, rng, y_band=(0.02, 0.55), record=[])
        else:
            boxes, gaps = _render_code(canvas, label, rng, y_band=(0.12, 0.88), record=[])

    canvas = _apply_cell_noise(canvas, noise, rng)
    image = CellImage(id=cell_id, pixels=canvas, source_box=(0, 0, w, h), state="raw")
    truth = CellTruth(
        label=label,
        glyph_boxes=tuple(boxes),
        gaps=gaps,
        has_diagonal=diagonal and label == BLANK,
        crossed_out=crossed_out_code is not None,
        original_code=crossed_out_code,
    )
    return GeneratedCell(image=image, truth=truth)


def _render_code(canvas, code, rng, y_band, record):
    h, w = canvas.shape
    d = len(code)
    margin = 0.05 * w
    slot = (w - 2 * margin) / d
    y0, y1 = y_band[0] * h, y_band[1] * h
    boxes = []
    for i, ch in enumerate(code):
        cx = margin + (i + 0.5) * slot
        gw = slot * rng.uniform(0.55, 0.72)
        box = (cx - gw / 2, y0, cx + gw / 2, y1)
        bbox = render_strokes(canvas, DIGIT_STROKES[ch], box, rng)
        boxes.append(bbox)
    if record is None:
        return None, ()
    gaps = tuple((boxes[i][2] + boxes[i + 1][0]) / 2.0 for i in range(d - 1))
    return boxes, gaps


# ---------------------------------------------------------------------------
# Corpus generation


@dataclass(frozen=True)
class CorpusSpec:
    n_cells: int
    codes: tuple[str, ...]
    code_weights: tuple[float, ...]
    blank_fraction: float = 0.0
    text_fraction: float = 0.0
    diagonal_blank_fraction: float = 0.5
    crossed_out_fraction: float = 0.0
    noise: str = "clean"
    seed: int = 0
    cell_hw: tuple[int, int] = (48, 128)

    def __post_init__(self):
        if self.blank_fraction + self.text_fraction > 1.0 + 1e-9:
            raise DomainError("blank_fraction + text_fraction must be <= 1")
        if len(self.codes) != len(self.code_weights):
            raise DomainError("codes and code_weights must align")
        if abs(sum(self.code_weights) - 1.0) > 1e-9:
            raise DomainError("code_weights must sum to 1")
        if self.noise not in NOISE_TIERS:
            raise DomainError(f"unknown noise tier {self.noise!r}")


def uniform_codes(n_classes: int, digit_count: int = 3, seed: int = 0) -> tuple[str, ...]:
    """Deterministic choice of ``n_classes`` distinct codes."""
    space = 10**digit_count
    if n_classes > space:
        raise DomainError("more classes than the code space allows")
    rng = np.random.default_rng(seed)
    picks = rng.choice(space, size=n_classes, replace=False)
    return tuple(str(int(v)).zfill(digit_count) for v in sorted(picks))


def long_tail_weights(n_classes: int, tail_mass: float = 0.10, ratio: float = 0.82) -> tuple[float, ...]:
    """Head classes get geometric mass (1 - tail_mass); the bottom half shares
    ``tail_mass`` uniformly. Classes are ordered most-frequent first."""
    if not 0 < tail_mass < 1:
        raise DomainError("tail_mass must be in (0, 1)")
    n_head = (n_classes + 1) // 2
    n_tail = n_classes - n_head
    head = np.power(ratio, np.arange(n_head))
    head = head / head.sum() * (1.0 - tail_mass)
    if n_tail:
        tail = np.full(n_tail, tail_mass / n_tail)
        w = np.concatenate([head, tail])
    else:
        w = head / head.sum()
    return tuple(float(v) for v in w)


def _largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    targets = np.asarray(weights, dtype=np.float64) * total
    counts = np.floor(targets).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(targets - counts), kind="stable")
    for i in order[:short]:
        counts[i] += 1
    return counts.tolist()


def corpus_labels(spec: CorpusSpec) -> list[str]:
    """The label of every cell in manifest-index order (pure function of spec)."""
    n_blank = round(spec.blank_fraction * spec.n_cells)
    n_text = round(spec.text_fraction * spec.n_cells)
    n_codes = spec.n_cells - n_blank - n_text
    per_class = _largest_remainder(n_codes, spec.code_weights)
    labels = [BLANK] * n_blank + [TEXT] * n_text
    for code, k in zip(spec.codes, per_class):
        labels.extend([code] * k)
    rng = np.random.default_rng(spec.seed)
    rng.shuffle(labels)
    return labels


def gen_corpus(spec: CorpusSpec) -> list[GeneratedCell]:
    labels = corpus_labels(spec)
    page_id = f"synth{spec.seed}"
    cells = []
    for idx, label in enumerate(labels):
        rng = np.random.default_rng([spec.seed, idx])
        diagonal = label == BLANK and rng.random() < spec.diagonal_blank_fraction
        crossed = None
        if label not in (BLANK, TEXT) and rng.random() < spec.crossed_out_fraction:
            crossed = "".join(
                str(int(rng.integers(0, 10))) for _ in range(len(label))
            )
        cells.append(
            gen_cell(
                label,
                CellId(page_id, idx, 0),
                rng,
                cell_hw=spec.cell_hw,
                noise=spec.noise,
                diagonal=diagonal,
                crossed_out_code=crossed,
            )
        )
    return cells


def write_corpus(
    cells: Sequence[GeneratedCell],
    schema: ColumnSchema,
    out_dir: str | Path,
    provenance: str = "synthetic",
) -> Path:
    """Persist cells as PNGs plus a manifest and a ground-truth sidecar.

    Returns the manifest path; images are stored under ``images/`` relative
    to it.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for gc in cells:
        name = f"{gc.image.id}.png"
        save_cell_png(gc.image, img_dir / name)
        entries.append(
            ManifestEntry(
                cell_id=gc.image.id,
                image=f"images/{name}",
                labels=(Label(gc.truth.label, "synth", SYNTH_TIMESTAMP),),
            )
        )
    manifest = DatasetManifest(schema=schema, entries=tuple(entries), provenance=provenance)
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest, manifest_path)
    truth_path = out_dir / "truth.jsonl"
    with open(truth_path, "w", encoding="utf-8") as f:
        for gc in sorted(cells, key=lambda c: str(c.image.id)):
            t = gc.truth
            f.write(
                json.dumps(
                    {
                        "cell_id": str(gc.image.id),
                        "label": t.label,
                        "glyph_boxes": [list(b) for b in t.glyph_boxes],
                        "gaps": list(t.gaps),
                        "has_diagonal": t.has_diagonal,
                        "crossed_out": t.crossed_out,
                        "original_code": t.original_code,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return manifest_path


# ---------------------------------------------------------------------------
# Page generation


@dataclass(frozen=True)
class PageLayout:
    n_code_rows: int = 30
    person_row_px: int = 48
    code_row_px: int = 40
    n_columns: int = 6
    column_px: int = 130
    code_column: int = 3
    margin: int = 36
    ruling_px: int = 2
    cell_inset_px: int = 2  # box convention shared with the cell extractor
    noise: str = "clean"
    digit_count: int = 3

    @property
    def width(self) -> int:
        return 2 * self.margin + self.n_columns * self.column_px

    @property
    def height(self) -> int:
        return 2 * self.margin + self.n_code_rows * (self.person_row_px + self.code_row_px)


@dataclass(frozen=True)
class PageTruth:
    page_id: str
    h_lines: tuple[float, ...]
    v_lines: tuple[float, ...]
    code_cells: tuple[tuple[int, int, tuple[int, int, int, int], str], ...]
    rotation_deg: float = 0.0

    @property
    def cell_boxes(self) -> dict[tuple[int, int], tuple[int, int, int, int]]:
        return {(r, c): box for r, c, box, _ in self.code_cells}


def _rotate_page(pixels: np.ndarray, deg: float) -> np.ndarray:
    h, w = pixels.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rad = math.radians(deg)
    cos, sin = math.cos(rad), math.sin(rad)
    ys, xs = np.mgrid[0:h, 0:w]
    sx = cos * (xs - cx) + sin * (ys - cy) + cx
    sy = -sin * (xs - cx) + cos * (ys - cy) + cy
    sxi = np.clip(np.round(sx).astype(int), 0, w - 1)
    syi = np.clip(np.round(sy).astype(int), 0, h - 1)
    out = pixels[syi, sxi]
    invalid = (sx < 0) | (sx > w - 1) | (sy < 0) | (sy > h - 1)
    out[invalid] = 250
    return out


def gen_page(
    page_id: str,
    layout: PageLayout,
    rng: np.random.Generator,
    codes: Optional[Sequence[str]] = None,
):
    """Render one questionnaire page: black rulings, alternating person and
    code rows, red code glyphs. Returns (PageImage, PageTruth)."""
    from .pagegrid import PageImage  # local import to avoid a cycle

    h, w = layout.height, layout.width
    paper = rng.integers(246, 252)
    pixels = np.full((h, w, 3), paper, dtype=np.uint8)

    ys = [float(layout.margin)]
    for _ in range(layout.n_code_rows):
        ys.append(ys[-1] + layout.person_row_px)
        ys.append(ys[-1] + layout.code_row_px)
    xs = [float(layout.margin + j * layout.column_px) for j in range(layout.n_columns + 1)]

    dark = int(rng.integers(18, 32))
    for yc in ys:
        y0 = int(round(yc)) - layout.ruling_px // 2
        pixels[max(y0, 0) : y0 + layout.ruling_px, int(xs[0]) : int(round(xs[-1])) + 1] = dark
    for xc in xs:
        x0 = int(round(xc)) - layout.ruling_px // 2
        pixels[int(ys[0]) : int(round(ys[-1])) + 1, max(x0, 0) : x0 + layout.ruling_px] = dark

    # ruling centers: a strip [y0, y0+2) has its ink centroid at y0 + 0.5
    h_centers = tuple(round(y) - layout.ruling_px // 2 + layout.ruling_px / 2.0 - 0.5 for y in ys)
    v_centers = tuple(round(x) - layout.ruling_px // 2 + layout.ruling_px / 2.0 - 0.5 for x in xs)

    ink = np.zeros((h, w), dtype=np.float64)
    gray_ink = np.zeros((h, w), dtype=np.float64)
    code_cells = []
    inset = layout.cell_inset_px
    for band in range(2 * layout.n_code_rows):
        y0, y1 = h_centers[band], h_centers[band + 1]
        if band % 2 == 0:
            # person row: sparse gray letter scribbles
            cols = rng.choice(layout.n_columns, size=rng.integers(2, 4), replace=False)
            for j in cols:
                x0, x1 = v_centers[j], v_centers[j + 1]
                n_letters = int(rng.integers(2, 5))
                for i in range(n_letters):
                    lx0 = x0 + (x1 - x0) * (0.18 + 0.6 * i / n_letters)
                    lx1 = lx0 + (x1 - x0) * 0.12
                    tpl = LETTER_STROKES[int(rng.integers(0, len(LETTER_STROKES)))]
                    render_strokes(
                        gray_ink, tpl, (lx0, y0 + 0.3 * (y1 - y0), lx1, y1 - 0.25 * (y1 - y0)), rng
                    )
            continue
        j = layout.code_column
        x0, x1 = v_centers[j], v_centers[j + 1]
        code = (
            codes[len(code_cells)]
            if codes is not None
            else "".join(str(int(rng.integers(0, 10))) for _ in range(layout.digit_count))
        )
        box = (
            int(round(x0)) + inset,
            int(round(y0)) + inset,
            int(round(x1)) - inset,
            int(round(y1)) - inset,
        )
        cell_canvas = ink[box[1] : box[3], box[0] : box[2]]
        _render_code(cell_canvas, code, rng, y_band=(0.12, 0.88), record=[])
        code_cells.append((band, j, box, code))

    # blend red code ink and gray person ink over the paper
    alpha = ink[:, :, None]
    red = np.array(
        [rng.integers(185, 215), rng.integers(25, 55), rng.integers(25, 55)], dtype=np.float64
    )
    pixels = (pixels * (1 - alpha) + red[None, None, :] * alpha).astype(np.uint8)
    galpha = gray_ink[:, :, None]
    gray = np.array([105.0, 105.0, 110.0])
    pixels = (pixels * (1 - galpha) + gray[None, None, :] * galpha).astype(np.uint8)

    rotation = 0.0
    if layout.noise == "moderate":
        spots = rng.random((h, w)) < 0.001
        pixels[spots] = rng.integers(0, 80)
    elif layout.noise == "heavy":
        rotation = float(rng.uniform(1.2, 1.8) * (1 if rng.random() < 0.5 else -1))
        pixels = _rotate_page(pixels, rotation)
        spots = rng.random((h, w)) < 0.005
        pixels[spots] = rng.integers(0, 80)

    page = PageImage(page_id=page_id, pixels=pixels)
    truth = PageTruth(
        page_id=page_id,
        h_lines=h_centers,
        v_lines=v_centers,
        code_cells=tuple(code_cells),
        rotation_deg=rotation,
    )
    return page, truth


def gen_pages(n: int, layout: PageLayout, seed: int = 0) -> Iterator[tuple]:
    """Yield (page, truth) pairs one at a time (pages are large)."""
    for idx in range(n):
        rng = np.random.default_rng([seed, idx])
        yield gen_page(f"page{idx:04d}", layout, rng)
