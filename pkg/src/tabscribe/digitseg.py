"""Split 3-digit cells into single digits via a 1-D Gaussian mixture on the x-profile.

The x-axis ink profile is treated as a weighted sample (bin centers weighted
by normalized ink mass) and fit with a three-component mixture by EM. Cells
whose fit is not identifiably trimodal are skipped rather than guessed at.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import CellImage, CellId, DomainError
from .preprocess import ProfileHistogram, TARGET_1DIGIT, ink_profile, resize_bilinear


class DegenerateProfileError(DomainError):
    """Profile carries too little structure to fit three components."""


@dataclass(frozen=True)
class SegConfig:
    max_iter: int = 200
    ll_tol: float = 1e-6
    sigma_floor: float = 0.5
    min_weight: float = 0.10
    min_sep_frac: float = 0.12
    digit_target_hw: tuple[int, int] = TARGET_1DIGIT


@dataclass(frozen=True)
class GmmFit:
    """Fitted three-component mixture; components sorted by ascending mean."""

    weights: tuple[float, float, float]
    means: tuple[float, float, float]
    stddevs: tuple[float, float, float]
    log_likelihood: float
    iterations: int
    ll_trace: tuple[float, ...] = field(repr=False, default=())

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for w, mu, sd in zip(self.weights, self.means, self.stddevs):
            out += w * np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
        return out


def _weighted_ll(x, w, pi, mu, sd):
    # sum_i w_i log sum_k pi_k N(x_i; mu_k, sd_k)
    comp = pi[:, None] * np.exp(-0.5 * ((x[None, :] - mu[:, None]) / sd[:, None]) ** 2) / (
        sd[:, None] * math.sqrt(2 * math.pi)
    )
    dens = comp.sum(axis=0)
    return float(np.sum(w * np.log(np.maximum(dens, 1e-300)))), comp, dens


def fit_gmm3(profile: ProfileHistogram, cfg: SegConfig = SegConfig()) -> GmmFit:
    """EM fit of a 3-component 1-D normal mixture to a normalized profile.

    Deterministic: means start at W/6, W/2, 5W/6 with equal weights and
    sigma = W/8. Stops when the weighted log-likelihood improves by less
    than ``cfg.ll_tol`` or after ``cfg.max_iter`` iterations.
    """
    bins = np.asarray(profile.bins, dtype=np.float64)
    nz = np.flatnonzero(bins > 0)
    if nz.size < 3:
        raise DegenerateProfileError(f"profile has {nz.size} nonzero bins, need >= 3")
    width = len(bins)
    x = nz.astype(np.float64) + 0.5  # bin centers
    w = bins[nz]
    w = w / w.sum()

    pi = np.full(3, 1.0 / 3.0)
    mu = np.array([width / 6.0, width / 2.0, 5.0 * width / 6.0])
    sd = np.full(3, max(width / 8.0, cfg.sigma_floor))

    ll, comp, dens = _weighted_ll(x, w, pi, mu, sd)
    trace = [ll]
    it = 0
    for it in range(1, cfg.max_iter + 1):
        # E step
        resp = comp / np.maximum(dens[None, :], 1e-300)
        # M step with sample weights
        wk = resp * w[None, :]
        nk = np.maximum(wk.sum(axis=1), 1e-300)
        pi = nk / nk.sum()
        mu = (wk @ x) / nk
        var = (wk @ (x**2)) / nk - mu**2
        sd = np.sqrt(np.maximum(var, cfg.sigma_floor**2))
        new_ll, comp, dens = _weighted_ll(x, w, pi, mu, sd)
        trace.append(new_ll)
        if new_ll - ll < cfg.ll_tol:
            ll = new_ll
            break
        ll = new_ll

    order = np.argsort(mu)
    return GmmFit(
        weights=tuple(float(v) for v in pi[order]),
        means=tuple(float(v) for v in mu[order]),
        stddevs=tuple(float(v) for v in sd[order]),
        log_likelihood=ll,
        iterations=it,
        ll_trace=tuple(trace),
    )


def check_trimodal(fit: GmmFit, width: int, cfg: SegConfig = SegConfig()) -> bool:
    """True iff every component carries weight and the means are separated."""
    if min(fit.weights) < cfg.min_weight:
        return False
    gaps = (fit.means[1] - fit.means[0], fit.means[2] - fit.means[1])
    return min(gaps) >= cfg.min_sep_frac * width


@dataclass(frozen=True)
class SegmentationOutcome:
    """Either a successful split into three digit crops or a skip with reason."""

    cell_id: CellId
    crops: Optional[tuple[CellImage, CellImage, CellImage]] = None
    cuts: Optional[tuple[int, int]] = None
    reason: Optional[str] = None
    fit: Optional[GmmFit] = None

    @property
    def is_split(self) -> bool:
        return self.crops is not None


def _density_minimum(fit: GmmFit, lo: float, hi: float) -> float:
    """Cut point: argmin of the fitted mixture density between two means."""
    lo_i, hi_i = int(math.ceil(lo)), int(math.floor(hi))
    if hi_i <= lo_i:
        return (lo + hi) / 2.0
    xs = np.arange(lo_i, hi_i + 1, dtype=np.float64)
    dens = fit.pdf(xs)
    return float(xs[int(np.argmin(dens))])


def segment_three(cell: CellImage, cfg: SegConfig = SegConfig()) -> SegmentationOutcome:
    """Split a preprocessed 3-digit cell into three 1-digit crops.

    Cuts fall at the minima of the fitted mixture density between adjacent
    means (midpoint fallback when the span is empty); the three column ranges
    partition the cell width exactly. Crops are resized to the 1-digit target.
    """
    profile = ink_profile(cell, "x")
    try:
        fit = fit_gmm3(profile, cfg)
    except DegenerateProfileError:
        return SegmentationOutcome(cell_id=cell.id, reason="degenerate")

    width = cell.width
    if not check_trimodal(fit, width, cfg):
        return SegmentationOutcome(cell_id=cell.id, reason="not trimodal", fit=fit)

    x1 = int(round(_density_minimum(fit, fit.means[0], fit.means[1])))
    x2 = int(round(_density_minimum(fit, fit.means[1], fit.means[2])))
    x1 = max(1, min(x1, width - 2))
    x2 = max(x1 + 1, min(x2, width - 1))

    pieces = []
    for k, (a, b) in enumerate(((0, x1), (x1, x2), (x2, width))):
        crop = cell.pixels[:, a:b]
        resized = resize_bilinear(crop, cfg.digit_target_hw)
        lo, hi = resized.min(), resized.max()
        resized = np.zeros_like(resized) if hi - lo < 1e-12 else (resized - lo) / (hi - lo)
        x0, y0, _, y1_ = cell.source_box
        pieces.append(
            CellImage(
                id=CellId(f"{cell.id.page_id}_r{cell.id.row_index}_c{cell.id.column_index}", 0, k),
                pixels=resized,
                source_box=(x0 + a, y0, x0 + b, y1_),
                state="preprocessed",
            )
        )
    return SegmentationOutcome(
        cell_id=cell.id, crops=(pieces[0], pieces[1], pieces[2]), cuts=(x1, x2), fit=fit
    )
