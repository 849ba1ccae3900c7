"""Normalization of cell images to model-ready tensors, plus ink-density profiles."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .domain import CellImage, CellId, DomainError

LUMA = (0.299, 0.587, 0.114)

# Default model input sizes as (height, width).
TARGET_3DIGIT = (48, 128)
TARGET_1DIGIT = (32, 32)


class PreprocessError(DomainError):
    pass


def to_ink_gray(pixels: np.ndarray) -> np.ndarray:
    """Collapse color to grayscale ink intensity (float, 1.0 = full ink).

    Accepts HxW float ink images (returned as-is), HxW uint8 luma (paper
    white), or HxWx3 color in 8-bit channels.
    """
    px = np.asarray(pixels)
    if px.ndim == 3:
        gray = px.astype(np.float32) @ np.asarray(LUMA, dtype=np.float32)
        return 1.0 - gray.astype(np.float64) / 255.0
    if px.dtype.kind in "ui":
        return 1.0 - px.astype(np.float64) / 255.0
    return px.astype(np.float64)


def resize_bilinear(img: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with pixel-center alignment; identity at equal size."""
    h, w = img.shape
    th, tw = target_hw
    if (h, w) == (th, tw):
        return img.astype(np.float64)
    ys = (np.arange(th) + 0.5) * (h / th) - 0.5
    xs = (np.arange(tw) + 0.5) * (w / tw) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    img = img.astype(np.float64)
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def preprocess(cell: CellImage, target_hw: tuple[int, int] = TARGET_3DIGIT) -> CellImage:
    """Grayscale, resize to ``target_hw``, min-max normalize to [0, 1] ink.

    Constant images map to all-zeros. Already-preprocessed input at the same
    size passes through unchanged up to renormalization.
    """
    if cell.pixels.size == 0:
        raise PreprocessError(f"zero-area cell {cell.id}")
    ink = to_ink_gray(cell.pixels)
    if ink.shape[0] == 0 or ink.shape[1] == 0:
        raise PreprocessError(f"zero-area cell {cell.id}")
    out = resize_bilinear(ink, target_hw)
    lo, hi = out.min(), out.max()
    if hi - lo < 1e-12:
        out = np.zeros_like(out)
    else:
        out = (out - lo) / (hi - lo)
    return CellImage(id=cell.id, pixels=out, source_box=cell.source_box, state="preprocessed")


@dataclass(frozen=True)
class ProfileHistogram:
    """Normalized marginal ink density along one axis. Blank images get all-zero bins."""

    axis: str  # "x" | "y"
    bins: np.ndarray
    bin_width: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "bins", np.asarray(self.bins, dtype=np.float64))

    @property
    def total(self) -> float:
        return float(self.bins.sum())


def ink_profile(cell: CellImage, axis: str = "x") -> ProfileHistogram:
    if axis not in ("x", "y"):
        raise DomainError(f"axis must be 'x' or 'y', got {axis!r}")
    sums = cell.pixels.sum(axis=0 if axis == "x" else 1).astype(np.float64)
    total = sums.sum()
    bins = sums / total if total > 0 else np.zeros_like(sums)
    return ProfileHistogram(axis=axis, bins=bins)


def save_cell_png(cell: CellImage, path: str | Path) -> None:
    """PNG with conventional polarity (paper white, ink dark)."""
    gray = np.clip((1.0 - to_ink_gray(cell.pixels)) * 255.0, 0, 255).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path, format="PNG")


def load_cell_png(path: str | Path, cell_id: CellId | None = None) -> CellImage:
    with Image.open(path) as im:
        gray = np.asarray(im.convert("L"))
    cid = cell_id or CellId.parse(Path(path).stem)
    return CellImage(id=cid, pixels=1.0 - gray.astype(np.float64) / 255.0)
