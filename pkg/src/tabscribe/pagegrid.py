"""Parse scanned questionnaire pages into a ruling grid and extract cell images.

Rulings are found on the binarized page via banded ink-run coverage profiles
(the corpus has strictly axis-aligned lines); nearby detections merge to
their ink-weighted centroid. Pages whose grid cannot be recovered fail
loudly instead of producing bad cells.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import CellId, CellImage, DomainError
from .preprocess import to_ink_gray

log = logging.getLogger(__name__)


class GridDetectionError(DomainError):
    pass


@dataclass
class PageImage:
    page_id: str
    pixels: np.ndarray  # HxWx3, 8-bit channels
    dpi: Optional[int] = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise DomainError(f"page pixels must be HxWx3, got {px.shape}")
        self.pixels = px


@dataclass(frozen=True)
class GridModel:
    horizontal_lines: tuple[float, ...]
    vertical_lines: tuple[float, ...]

    def __post_init__(self):
        for lines in (self.horizontal_lines, self.vertical_lines):
            if any(b <= a for a, b in zip(lines, lines[1:])):
                raise DomainError("grid lines must be strictly increasing")

    @property
    def intersections(self) -> np.ndarray:
        """[i][j] -> (x, y) of (horizontal i, vertical j)."""
        h = np.asarray(self.horizontal_lines)
        v = np.asarray(self.vertical_lines)
        return np.stack(np.meshgrid(v, h), axis=-1)

    @property
    def n_row_bands(self) -> int:
        return len(self.horizontal_lines) - 1

    @property
    def n_column_bands(self) -> int:
        return len(self.vertical_lines) - 1


@dataclass(frozen=True)
class LineConfig:
    min_coverage: float = 0.6
    band_px: int = 3
    merge_px: int = 8


@dataclass(frozen=True)
class CellConfig:
    """Row/column selection and boundary-extension parameters.

    ``row_start``/``row_stride`` select row bands (questionnaires alternate
    person and code rows, so the presets use stride 2). ``column_bands`` of
    None selects every column band.
    """

    row_start: int = 0
    row_stride: int = 1
    column_bands: Optional[tuple[int, ...]] = None
    min_cell_px: int = 8
    inset_px: int = 2
    # boundary extension
    strip_px: int = 2
    min_hits: int = 3
    step_px: int = 10
    max_px: int = 50
    red_margin: int = 30


QUESTIONNAIRE_CELLS = CellConfig(row_start=1, row_stride=2)


@dataclass
class PageSplitResult:
    page_id: str
    status: str  # "split" | "failed"
    cells: list[CellImage] = field(default_factory=list)
    failure_reason: Optional[str] = None
    skipped: int = 0


def otsu_threshold(gray: np.ndarray) -> float:
    """Threshold maximizing between-class variance of a [0, 1] image."""
    hist, edges = np.histogram(gray, bins=256, range=(0.0, 1.0))
    hist = hist.astype(np.float64)
    total = hist.sum()
    if total == 0:
        return 0.5
    centers = (edges[:-1] + edges[1:]) / 2
    w0 = np.cumsum(hist)
    w1 = total - w0
    m0 = np.cumsum(hist * centers)
    mt = m0[-1]
    valid = (w0 > 0) & (w1 > 0)
    between = np.zeros_like(w0)
    between[valid] = (mt * w0[valid] - total * m0[valid]) ** 2 / (
        w0[valid] * w1[valid] * total * total
    ) * total
    if not valid.any():
        return 0.5
    return float(centers[int(np.argmax(between))])


def binarize_ink(page: PageImage, ink: Optional[np.ndarray] = None) -> np.ndarray:
    """Boolean ink mask; ink is the minority class, so the mask is invariant
    to inverting paper/ink polarity."""
    if ink is None:
        ink = to_ink_gray(page.pixels)
    thr = otsu_threshold(ink)
    mask = ink > thr
    if mask.mean() > 0.5:
        mask = ~mask
    return mask


def _band_dilate(mask: np.ndarray, radius: int, axis: int) -> np.ndarray:
    out = mask.copy()
    for d in range(1, radius + 1):
        shifted = np.zeros_like(mask)
        if axis == 0:
            shifted[d:, :] = mask[:-d, :]
            out |= shifted
            shifted = np.zeros_like(mask)
            shifted[:-d, :] = mask[d:, :]
        else:
            shifted[:, d:] = mask[:, :-d]
            out |= shifted
            shifted = np.zeros_like(mask)
            shifted[:, :-d] = mask[:, d:]
        out |= shifted
    return out


def _detect_axis(mask: np.ndarray, axis: int, cfg: LineConfig) -> list[float]:
    """Line coordinates along ``axis`` (0: horizontal lines / y, 1: vertical / x)."""
    radius = max((cfg.band_px - 1) // 2, 0)
    banded = _band_dilate(mask, radius, axis=axis) if radius else mask
    cov = banded.mean(axis=1 if axis == 0 else 0)
    weights = mask.sum(axis=1 if axis == 0 else 0).astype(np.float64)
    candidates = np.flatnonzero(cov >= cfg.min_coverage)
    if candidates.size == 0:
        return []
    lines = []
    group = [int(candidates[0])]
    for c in candidates[1:]:
        if c - group[-1] <= cfg.merge_px:
            group.append(int(c))
        else:
            lines.append(_centroid(group, weights))
            group = [int(c)]
    lines.append(_centroid(group, weights))
    return lines


def _centroid(positions: list[int], weights: np.ndarray) -> float:
    pos = np.asarray(positions, dtype=np.float64)
    w = weights[positions]
    if w.sum() <= 0:
        return float(pos.mean())
    return float((pos * w).sum() / w.sum())


def detect_lines(
    page: PageImage, cfg: LineConfig = LineConfig(), ink: Optional[np.ndarray] = None
) -> GridModel:
    """Find every ruling whose banded ink coverage reaches ``cfg.min_coverage``."""
    mask = binarize_ink(page, ink)
    horizontal = _detect_axis(mask, axis=0, cfg=cfg)
    vertical = _detect_axis(mask, axis=1, cfg=cfg)
    if len(horizontal) < 2 or len(vertical) < 2:
        raise GridDetectionError(
            f"grid not found: {len(horizontal)} horizontal / {len(vertical)} vertical lines"
        )
    return GridModel(horizontal_lines=tuple(horizontal), vertical_lines=tuple(vertical))


def _red_mask(rgb: np.ndarray, margin: int) -> np.ndarray:
    r = rgb[..., 0].astype(np.int32)
    g = rgb[..., 1].astype(np.int32)
    b = rgb[..., 2].astype(np.int32)
    return (r > g + margin) & (r > b + margin)


def extend_boundary(
    page: PageImage, box: tuple[int, int, int, int], cfg: CellConfig = CellConfig()
) -> tuple[tuple[int, int, int, int], bool]:
    """Grow any side whose inner border strip still contains colored-ink pixels.

    Growth proceeds in ``cfg.step_px`` increments up to ``cfg.max_px`` per
    side, clamped to the page. Returns (box, truncated) where ``truncated``
    means some side hit its growth limit while hits remained.
    """
    h, w = page.pixels.shape[:2]
    x0, y0, x1, y1 = box
    grown = [0, 0, 0, 0]  # left, top, right, bottom
    truncated = False

    def strip_hits(side: str) -> int:
        s = cfg.strip_px
        if side == "left":
            region = page.pixels[y0:y1, x0 : min(x0 + s, x1)]
        elif side == "right":
            region = page.pixels[y0:y1, max(x1 - s, x0) : x1]
        elif side == "top":
            region = page.pixels[y0 : min(y0 + s, y1), x0:x1]
        else:
            region = page.pixels[max(y1 - s, y0) : y1, x0:x1]
        if region.size == 0:
            return 0
        return int(_red_mask(region, cfg.red_margin).sum())

    changed = True
    while changed:
        changed = False
        for i, side in enumerate(("left", "top", "right", "bottom")):
            if strip_hits(side) < cfg.min_hits:
                continue
            if grown[i] >= cfg.max_px:
                truncated = True
                continue
            step = min(cfg.step_px, cfg.max_px - grown[i])
            if side == "left":
                nx = max(x0 - step, 0)
                step_done = x0 - nx
                x0 = nx
            elif side == "top":
                ny = max(y0 - step, 0)
                step_done = y0 - ny
                y0 = ny
            elif side == "right":
                nx = min(x1 + step, w)
                step_done = nx - x1
                x1 = nx
            else:
                ny = min(y1 + step, h)
                step_done = ny - y1
                y1 = ny
            grown[i] += step
            if step_done > 0:
                changed = True
    return (x0, y0, x1, y1), truncated


def selected_row_bands(n_bands: int, cfg: CellConfig) -> list[int]:
    return list(range(cfg.row_start, n_bands, cfg.row_stride))


def extract_cells(
    page: PageImage,
    grid: GridModel,
    cfg: CellConfig = CellConfig(),
    ink: Optional[np.ndarray] = None,
) -> tuple[list[CellImage], int]:
    """One grayscale cell per selected (row band, column band) region.

    Boxes run between adjacent line centers, inset by ``cfg.inset_px`` to
    exclude the rulings themselves, then extended through the colored-ink
    border rule. Degenerate regions are skipped and counted.
    """
    gray = to_ink_gray(page.pixels) if ink is None else ink
    h = grid.horizontal_lines
    v = grid.vertical_lines
    cols = cfg.column_bands if cfg.column_bands is not None else tuple(range(grid.n_column_bands))
    cells: list[CellImage] = []
    skipped = 0
    for i in selected_row_bands(grid.n_row_bands, cfg):
        y0 = int(round(h[i])) + cfg.inset_px
        y1 = int(round(h[i + 1])) - cfg.inset_px
        for j in cols:
            if j >= grid.n_column_bands:
                continue
            x0 = int(round(v[j])) + cfg.inset_px
            x1 = int(round(v[j + 1])) - cfg.inset_px
            if x1 - x0 < cfg.min_cell_px or y1 - y0 < cfg.min_cell_px:
                skipped += 1
                log.warning("page %s: degenerate cell r%d c%d skipped", page.page_id, i, j)
                continue
            box, _ = extend_boundary(page, (x0, y0, x1, y1), cfg)
            crop = gray[box[1] : box[3], box[0] : box[2]]
            cells.append(
                CellImage(
                    id=CellId(page.page_id, i, j),
                    pixels=crop,
                    source_box=box,
                    state="raw",
                )
            )
    return cells, skipped


def split_page(
    page: PageImage, line_cfg: LineConfig = LineConfig(), cell_cfg: CellConfig = CellConfig()
) -> PageSplitResult:
    """Compose line detection and cell extraction; failures carry a reason."""
    ink = to_ink_gray(page.pixels)
    try:
        grid = detect_lines(page, line_cfg, ink=ink)
    except GridDetectionError as e:
        return PageSplitResult(page_id=page.page_id, status="failed", failure_reason=str(e))
    cells, skipped = extract_cells(page, grid, cell_cfg, ink=ink)
    if not cells:
        return PageSplitResult(
            page_id=page.page_id, status="failed", failure_reason="no cells extracted",
            skipped=skipped,
        )
    return PageSplitResult(page_id=page.page_id, status="split", cells=cells, skipped=skipped)
