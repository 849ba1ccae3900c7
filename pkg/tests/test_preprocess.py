import numpy as np
import pytest

from tabscribe.domain import CellId, CellImage
from tabscribe.preprocess import (
    PreprocessError,
    ink_profile,
    load_cell_png,
    preprocess,
    resize_bilinear,
    save_cell_png,
)


def cell_from(pixels, state="raw"):
    return CellImage(CellId("t", 0, 0), np.asarray(pixels), state=state)


class TestPreprocess:
    def test_color_cell_resized_and_normalized(self):
        # red strokes on white paper, 200x80 -> 48x128, darkest stroke maps to 1.0
        px = np.full((80, 200, 3), 255, dtype=np.uint8)
        px[30:50, 40:60] = (200, 30, 30)
        out = preprocess(cell_from(px), (48, 128))
        assert out.pixels.shape == (48, 128)
        assert out.state == "preprocessed"
        assert out.pixels.max() == pytest.approx(1.0)
        assert out.pixels.min() == pytest.approx(0.0)

    def test_identity_resize_only_rescales(self):
        rng = np.random.default_rng(0)
        img = rng.random((48, 128)) * 0.5 + 0.1
        out = preprocess(cell_from(img), (48, 128))
        expected = (img - img.min()) / (img.max() - img.min())
        assert np.allclose(out.pixels, expected, atol=1e-12)

    def test_uniform_cell_maps_to_zeros(self):
        out = preprocess(cell_from(np.full((20, 30), 0.7)), (16, 16))
        assert (out.pixels == 0).all()

    def test_idempotent_at_same_size(self):
        rng = np.random.default_rng(1)
        cell = cell_from(rng.random((32, 64)))
        once = preprocess(cell, (32, 64))
        twice = preprocess(once, (32, 64))
        assert np.abs(once.pixels - twice.pixels).max() < 1e-6

    def test_zero_area_rejected(self):
        cell = cell_from(np.zeros((4, 5)))
        cell.pixels = np.zeros((0, 5))  # bypass construction guard
        with pytest.raises(PreprocessError):
            preprocess(cell, (8, 8))

    def test_resize_preserves_peak_order(self):
        # three bars of distinct total ink; 3px wide so downsampling keeps them
        img = np.zeros((20, 90))
        img[:, 9:12] = 0.5
        img[:, 44:47] = 1.0
        img[:, 79:82] = 0.75
        small = resize_bilinear(img, (10, 30))
        cols = small.sum(axis=0)
        regions = {c: cols[c - 1 : c + 2].sum() for c in (3, 15, 26)}
        assert regions[15] > regions[26] > regions[3]


class TestInkProfile:
    def test_single_stroke_is_delta(self):
        img = np.zeros((20, 40))
        img[:, 10] = 1.0
        prof = ink_profile(cell_from(img, state="preprocessed"), "x")
        assert prof.bins[10] == pytest.approx(1.0)
        assert prof.bins.sum() == pytest.approx(1.0)

    def test_three_equal_strokes(self):
        img = np.zeros((20, 40))
        for c in (10, 20, 30):
            img[:, c] = 1.0
        prof = ink_profile(cell_from(img, state="preprocessed"), "x")
        for c in (10, 20, 30):
            assert prof.bins[c] == pytest.approx(1 / 3)

    def test_blank_is_zero_vector(self):
        prof = ink_profile(cell_from(np.zeros((10, 10)), state="preprocessed"), "x")
        assert (prof.bins == 0).all()

    def test_y_axis(self):
        img = np.zeros((30, 10))
        img[5, :] = 1.0
        prof = ink_profile(cell_from(img, state="preprocessed"), "y")
        assert prof.bins[5] == pytest.approx(1.0)
        assert len(prof.bins) == 30

    def test_nonzero_profile_sums_to_one(self):
        rng = np.random.default_rng(2)
        img = rng.random((17, 23))
        prof = ink_profile(cell_from(img, state="preprocessed"), "x")
        assert abs(prof.bins.sum() - 1.0) < 1e-9


class TestPngRoundTrip:
    def test_save_load_polarity(self, tmp_path):
        img = np.zeros((10, 12))
        img[4, 5] = 1.0  # ink spot
        p = tmp_path / "t_r0_c0.png"
        save_cell_png(cell_from(img), p)
        back = load_cell_png(p)
        assert back.pixels[4, 5] == pytest.approx(1.0, abs=1 / 255)
        assert back.pixels[0, 0] == pytest.approx(0.0, abs=1 / 255)
        assert str(back.id) == "t_r0_c0"
