from collections import Counter

import numpy as np
import pytest

from tabscribe.domain import BLANK, TEXT, CellId, read_manifest
from tabscribe.synth import (
    CorpusSpec,
    PageLayout,
    corpus_labels,
    gen_cell,
    gen_corpus,
    gen_page,
    long_tail_weights,
    uniform_codes,
    write_corpus,
)


class TestGenCell:
    def test_deterministic(self):
        a = gen_cell("042", CellId("t", 0, 0), np.random.default_rng(1))
        b = gen_cell("042", CellId("t", 0, 0), np.random.default_rng(1))
        assert (a.image.pixels == b.image.pixels).all()
        assert a.truth == b.truth

    def test_code_truth_recorded(self):
        gc = gen_cell("042", CellId("t", 0, 0), np.random.default_rng(1))
        assert gc.truth.label == "042"
        assert len(gc.truth.glyph_boxes) == 3
        assert len(gc.truth.gaps) == 2
        x0s = [b[0] for b in gc.truth.glyph_boxes]
        assert x0s == sorted(x0s)

    def test_blank_with_diagonal_has_ink(self):
        gc = gen_cell(BLANK, CellId("t", 0, 0), np.random.default_rng(2), diagonal=True)
        assert gc.truth.label == BLANK
        assert gc.truth.has_diagonal
        assert gc.image.pixels.sum() > 5

    def test_blank_without_diagonal_empty(self):
        gc = gen_cell(BLANK, CellId("t", 0, 0), np.random.default_rng(2), diagonal=False)
        assert gc.image.pixels.sum() == 0

    def test_text_cell_has_ink_and_label(self):
        gc = gen_cell(TEXT, CellId("t", 0, 0), np.random.default_rng(3))
        assert gc.truth.label == TEXT
        assert gc.image.pixels.sum() > 5

    def test_crossed_out_truth_is_new_code(self):
        gc = gen_cell(
            "555", CellId("t", 0, 0), np.random.default_rng(4), crossed_out_code="123"
        )
        assert gc.truth.label == "555"
        assert gc.truth.crossed_out
        assert gc.truth.original_code == "123"
        plain = gen_cell("555", CellId("t", 0, 0), np.random.default_rng(4))
        assert gc.image.pixels.sum() > plain.image.pixels.sum()

    def test_ground_truth_gap_consistency(self):
        # segmenting at recorded gaps keeps ~all of each digit's ink
        for seed in range(10):
            gc = gen_cell("385", CellId("t", 0, 0), np.random.default_rng([11, seed]))
            img = gc.image.pixels
            cuts = [0] + [int(round(g)) for g in gc.truth.gaps] + [img.shape[1]]
            for k, box in enumerate(gc.truth.glyph_boxes):
                x0, y0, x1, y1 = (int(v) for v in box)
                glyph_ink = img[:, max(x0, 0) : x1 + 1].sum()
                segment_ink = img[:, cuts[k] : cuts[k + 1]].sum()
                assert segment_ink >= 0.95 * glyph_ink


class TestDistributions:
    def test_long_tail_mass(self):
        w = long_tail_weights(100, tail_mass=0.2)
        assert len(w) == 100
        assert sum(w) == pytest.approx(1.0)
        assert sum(w[50:]) == pytest.approx(0.2)
        assert w[0] > w[49]

    def test_uniform_codes_distinct_sorted(self):
        codes = uniform_codes(50, seed=2)
        assert len(set(codes)) == 50
        assert list(codes) == sorted(codes)
        assert all(len(c) == 3 and c.isdigit() for c in codes)

    def test_counts_within_one_of_spec(self):
        codes = uniform_codes(7, seed=1)
        w = long_tail_weights(7, tail_mass=0.3)
        spec = CorpusSpec(
            n_cells=500, codes=codes, code_weights=w, blank_fraction=0.1, text_fraction=0.05, seed=4
        )
        labels = corpus_labels(spec)
        counts = Counter(labels)
        assert counts[BLANK] == 50
        assert counts[TEXT] == 25
        n_codes = 500 - 75
        for code, weight in zip(codes, w):
            assert abs(counts[code] - weight * n_codes) < 1.0


class TestGenCorpus:
    def test_deterministic_bytes(self, tmp_path, occupation_schema, small_corpus_spec):
        c1 = gen_corpus(small_corpus_spec)
        c2 = gen_corpus(small_corpus_spec)
        for a, b in zip(c1, c2):
            assert (a.image.pixels == b.image.pixels).all()
        p1 = write_corpus(c1, occupation_schema, tmp_path / "a")
        p2 = write_corpus(c2, occupation_schema, tmp_path / "b")
        assert p1.read_bytes() == p2.read_bytes()
        imgs1 = sorted((tmp_path / "a" / "images").iterdir())
        imgs2 = sorted((tmp_path / "b" / "images").iterdir())
        assert [p.name for p in imgs1] == [p.name for p in imgs2]
        for a, b in zip(imgs1, imgs2):
            assert a.read_bytes() == b.read_bytes()

    def test_manifest_round_trip(self, corpus_dir, occupation_schema, small_corpus):
        m = read_manifest(corpus_dir, occupation_schema)
        assert len(m) == len(small_corpus)
        labels = {str(c.image.id): c.truth.label for c in small_corpus}
        for e in m.entries:
            assert e.resolved_label == labels[str(e.cell_id)]


class TestGenPage:
    def test_truth_boxes_and_codes(self):
        layout = PageLayout(n_code_rows=5)
        page, truth = gen_page("p", layout, np.random.default_rng(0))
        assert len(truth.code_cells) == 5
        h, w = page.pixels.shape[:2]
        for _, _, (x0, y0, x1, y1), code in truth.code_cells:
            assert 0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h
            assert len(code) == 3 and code.isdigit()

    def test_moderate_rulings_exact(self):
        layout = PageLayout(n_code_rows=4, noise="moderate")
        page, truth = gen_page("p", layout, np.random.default_rng(1))
        assert truth.rotation_deg == 0.0
        assert len(truth.h_lines) == 9

    def test_heavy_rotated(self):
        layout = PageLayout(n_code_rows=4, noise="heavy")
        _, truth = gen_page("p", layout, np.random.default_rng(2))
        assert abs(truth.rotation_deg) >= 1.0

    def test_provided_codes_rendered(self):
        layout = PageLayout(n_code_rows=3)
        _, truth = gen_page("p", layout, np.random.default_rng(3), codes=["111", "222", "333"])
        assert [c for _, _, _, c in truth.code_cells] == ["111", "222", "333"]
