import math

import numpy as np
import pytest

from tabscribe.digitseg import (
    DegenerateProfileError,
    SegConfig,
    check_trimodal,
    fit_gmm3,
    segment_three,
)
from tabscribe.domain import CellId, CellImage
from tabscribe.preprocess import ProfileHistogram
from tabscribe.synth import gen_cell


def gaussian_profile(width, means, weights, sigma):
    x = np.arange(width) + 0.5
    bins = np.zeros(width)
    for mu, w in zip(means, weights):
        bins += w * np.exp(-0.5 * ((x - mu) / sigma) ** 2)
    return ProfileHistogram(axis="x", bins=bins / bins.sum())


class TestFitGmm3:
    def test_recovers_three_bumps(self):
        prof = gaussian_profile(128, [16, 64, 112], [1 / 3] * 3, sigma=5)
        fit = fit_gmm3(prof)
        for mu, target in zip(fit.means, (16, 64, 112)):
            assert abs(mu - target) <= 2.0

    def test_unimodal_collapses_means(self):
        prof = gaussian_profile(128, [64], [1.0], sigma=8)
        fit = fit_gmm3(prof)
        gaps = [fit.means[1] - fit.means[0], fit.means[2] - fit.means[1]]
        assert min(gaps) < 0.12 * 128  # fails the trimodality separation test
        assert not check_trimodal(fit, 128)

    def test_three_equal_deltas_symmetric_weights(self):
        bins = np.zeros(90)
        bins[[15, 45, 75]] = 1 / 3
        fit = fit_gmm3(ProfileHistogram(axis="x", bins=bins))
        for w in fit.weights:
            assert abs(w - 1 / 3) < 1e-6
        for mu, target in zip(fit.means, (15.5, 45.5, 75.5)):
            assert abs(mu - target) < 0.5

    def test_degenerate_profile_raises(self):
        bins = np.zeros(50)
        bins[10] = 0.6
        bins[30] = 0.4
        with pytest.raises(DegenerateProfileError):
            fit_gmm3(ProfileHistogram(axis="x", bins=bins))

    def test_log_likelihood_non_decreasing(self):
        rng = np.random.default_rng(0)
        for trial in range(25):
            width = int(rng.integers(40, 160))
            raw = rng.random(width) * (rng.random(width) < 0.4)
            if (raw > 0).sum() < 3:
                continue
            prof = ProfileHistogram(axis="x", bins=raw / raw.sum())
            fit = fit_gmm3(prof)
            diffs = np.diff(fit.ll_trace)
            assert (diffs >= -1e-9).all(), f"trial {trial}: LL decreased"

    def test_means_sorted_and_sigma_floor(self):
        prof = gaussian_profile(100, [20, 50, 80], [0.5, 0.3, 0.2], sigma=4)
        fit = fit_gmm3(prof)
        assert fit.means[0] <= fit.means[1] <= fit.means[2]
        assert min(fit.stddevs) >= SegConfig().sigma_floor - 1e-12


class TestCheckTrimodal:
    def fit_like(self, weights, means):
        from tabscribe.digitseg import GmmFit

        return GmmFit(weights=weights, means=means, stddevs=(2.0, 2.0, 2.0), log_likelihood=0.0, iterations=1)

    def test_well_separated_true(self):
        assert check_trimodal(self.fit_like((0.3, 0.35, 0.35), (16, 64, 112)), 128)

    def test_weight_floor(self):
        assert not check_trimodal(self.fit_like((0.95, 0.03, 0.02), (16, 64, 112)), 128)

    def test_separation_floor(self):
        assert not check_trimodal(self.fit_like((1 / 3,) * 3, (60, 64, 112)), 128)


def render_and_segment(code, seed, cfg=SegConfig()):
    rng = np.random.default_rng(seed)
    gc = gen_cell(code, CellId("t", 0, 0), rng)
    from tabscribe.preprocess import preprocess

    return gc, segment_three(preprocess(gc.image, (48, 128)), cfg)


class TestSegmentThree:
    def test_cuts_inside_gaps(self):
        checked = 0
        for seed in range(30):
            gc, out = render_and_segment("123", seed)
            if not out.is_split:
                continue
            checked += 1
            for k, cut in enumerate(out.cuts):
                lo = gc.truth.glyph_boxes[k][2] - 2
                hi = gc.truth.glyph_boxes[k + 1][0] + 2
                assert lo <= cut <= hi
        assert checked >= 25

    def test_crops_partition_width(self):
        _, out = render_and_segment("405", 3)
        assert out.is_split
        x1, x2 = out.cuts
        assert 0 < x1 < x2 < 128
        widths = (x1, x2 - x1, 128 - x2)
        assert sum(widths) == 128
        assert len(out.crops) == 3

    def test_touching_strokes_skipped(self):
        # heavily overlapping glyphs: modes too close for the separation rule
        bins = gaussian_profile(128, [56, 64, 72], [1 / 3] * 3, sigma=6).bins
        img = np.tile(bins, (48, 1))
        cell = CellImage(CellId("t", 0, 0), img / img.max(), state="preprocessed")
        out = segment_three(cell)
        assert not out.is_split
        assert out.reason == "not trimodal"

    def test_degenerate_becomes_skip(self):
        img = np.zeros((48, 128))
        img[:, 60] = 1.0
        cell = CellImage(CellId("t", 0, 0), img, state="preprocessed")
        out = segment_three(cell)
        assert not out.is_split
        assert out.reason == "degenerate"

    def test_translation_equivariance(self):
        base = gaussian_profile(128, [24, 60, 96], [1 / 3] * 3, sigma=5).bins
        img = np.tile(base, (48, 1))
        cell = CellImage(CellId("t", 0, 0), img / img.max(), state="preprocessed")
        out0 = segment_three(cell)
        assert out0.is_split
        for k in (-6, 4, 8):
            shifted = np.roll(img, k, axis=1)
            out_k = segment_three(CellImage(CellId("t", 0, 0), shifted / shifted.max(), state="preprocessed"))
            assert out_k.is_split
            assert abs(out_k.cuts[0] - (out0.cuts[0] + k)) <= 1
            assert abs(out_k.cuts[1] - (out0.cuts[1] + k)) <= 1

    def test_outcome_count_identity(self):
        outcomes = []
        for seed in range(20):
            _, out = render_and_segment("777", seed)
            outcomes.append(out)
        n_split = sum(1 for o in outcomes if o.is_split)
        n_skip = sum(1 for o in outcomes if not o.is_split)
        assert n_split + n_skip == len(outcomes)
