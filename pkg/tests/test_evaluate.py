import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabscribe.evaluate import (
    InputError,
    ShiftConfig,
    confusion_pairs,
    distribution_compare,
    inject_brightness_gradient,
    metrics,
    shift_test,
    shift_test_manifests,
    stratified_folds,
)


class TestMetrics:
    def test_perfect(self):
        rep = metrics(["a", "b", "a"], ["a", "b", "a"])
        assert rep.accuracy == 1.0
        assert rep.precision == 1.0 and rep.recall == 1.0 and rep.f1 == 1.0

    def test_two_class_fixture(self):
        # per class: TP=1, FP=1, FN=1 -> P=R=F1=0.5
        rep = metrics(["a", "b", "a", "b"], ["a", "a", "b", "b"])
        assert rep.accuracy == 0.5
        for c in rep.per_class:
            assert c.precision == 0.5 and c.recall == 0.5 and c.f1 == 0.5

    def test_never_predicted_class_zero_precision(self):
        rep = metrics(["a", "a"], ["a", "b"])
        by = {c.label: c for c in rep.per_class}
        assert by["b"].precision == 0.0 and by["b"].recall == 0.0

    def test_supports_sum_to_n(self):
        rep = metrics(["a", "b", "b"], ["b", "b", "a"])
        assert rep.n == 3

    def test_single_class_accuracy(self):
        rep = metrics(["a", "b", "a", "a"], ["a", "a", "a", "a"])
        assert rep.accuracy == 0.75

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            metrics(["a"], ["a", "b"])


class TestConfusionPairs:
    def test_ranked_pairs(self):
        preds = ["4"] * 5 + ["2"]
        truth = ["1"] * 5 + ["1"]
        pairs = confusion_pairs(preds, truth)
        assert pairs[0] == ("1", "4", 5)
        assert pairs[1] == ("1", "2", 1)

    def test_perfect_empty(self):
        assert confusion_pairs(["a", "b"], ["a", "b"]) == []

    def test_character_level_for_codes(self):
        pairs = confusion_pairs(["148", "148"], ["142", "142"])
        assert pairs == [("2", "8", 2)]

    def test_whole_label_for_mixed(self):
        pairs = confusion_pairs(["B"], ["042"])
        assert pairs == [("042", "B", 1)]

    def test_total_confusions_conserve(self):
        preds = ["a", "b", "c", "a"]
        truth = ["a", "c", "c", "b"]
        pairs = confusion_pairs(preds, truth, top_k=100)
        n_wrong = sum(c for _, _, c in pairs)
        assert n_wrong == sum(p != t for p, t in zip(preds, truth))


class TestDistributionCompare:
    def test_identical_zero_tv(self):
        labels = ["a"] * 5 + ["b"] * 5
        comp = distribution_compare(labels, list(labels))
        assert comp.tv_distance == 0.0
        assert comp.deviating == ()

    def test_hand_computed_tv(self):
        ref = ["a"] * 50 + ["b"] * 50
        pred = ["a"] * 90 + ["b"] * 10
        comp = distribution_compare(ref, pred)
        assert comp.tv_distance == pytest.approx(0.4)

    def test_overestimated_class_flagged(self):
        ref = ["a"] * 50 + ["b"] * 50
        pred = ["a"] * 95 + ["b"] * 5
        comp = distribution_compare(ref, pred, deviation_factor=2.0, min_support=3)
        assert "b" in comp.deviating
        by = dict(zip(comp.classes, zip(comp.reference_freq, comp.predicted_freq)))
        assert by["a"][1] > by["a"][0]  # above the diagonal

    def test_min_support_suppresses_noise(self):
        ref = ["a"] * 100 + ["rare"]
        pred = ["a"] * 101
        comp = distribution_compare(ref, pred, min_support=5)
        assert "rare" not in comp.deviating

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            distribution_compare([], ["a"])

    @given(
        st.lists(st.sampled_from("abc"), min_size=1, max_size=40),
        st.lists(st.sampled_from("abc"), min_size=1, max_size=40),
    )
    @settings(max_examples=40, deadline=None)
    def test_tv_symmetric_bounded(self, xs, ys):
        c1 = distribution_compare(xs, ys)
        c2 = distribution_compare(ys, xs)
        assert c1.tv_distance == pytest.approx(c2.tv_distance, abs=1e-12)
        assert 0.0 <= c1.tv_distance <= 1.0


class TestStratifiedFolds:
    def test_deterministic_partition(self):
        labels = ["a"] * 10 + ["b"] * 15
        f1 = stratified_folds(labels, 5, seed=3)
        f2 = stratified_folds(labels, 5, seed=3)
        assert all((a == b).all() for a, b in zip(f1, f2))
        allidx = np.concatenate(f1)
        assert len(allidx) == 25 and len(set(allidx.tolist())) == 25

    def test_small_class_pinned_to_train(self):
        labels = ["a"] * 10 + ["tiny"] * 2
        with pytest.warns(UserWarning, match="smaller than k"):
            folds = stratified_folds(labels, 5, seed=0)
        fold_members = set(np.concatenate(folds).tolist())
        assert 10 not in fold_members and 11 not in fold_members

    def test_k_validation(self):
        with pytest.raises(InputError):
            stratified_folds(["a", "b"], 1, seed=0)


def blob_sample(n, seed, shifted=False):
    rng = np.random.default_rng(seed)
    x = rng.random((n, 32, 32, 1)).astype(np.float32) * 0.3
    x[:, 8:24, 8:24, :] += 0.4
    if shifted:
        x = inject_brightness_gradient(x, 0.05)
    return np.clip(x, 0, 1)


class TestShiftTest:
    def test_size_mismatch_rejected(self):
        with pytest.raises(InputError, match="10%"):
            shift_test(blob_sample(100, 0), blob_sample(80, 1))

    def test_injected_artifact_detected(self):
        rep = shift_test(blob_sample(150, 0), blob_sample(150, 1, shifted=True), ShiftConfig(seed=0))
        assert rep.f1_a >= 0.8 and rep.f1_b >= 0.8

    def test_identical_files_rejected(self, corpus_dir, occupation_schema):
        from tabscribe.domain import read_manifest

        m = read_manifest(corpus_dir, occupation_schema)
        with pytest.raises(InputError, match="degenerate"):
            shift_test_manifests(m, corpus_dir, m, corpus_dir)


class TestBrightnessGradient:
    def test_ramp_shape(self):
        x = np.zeros((1, 4, 10, 1), dtype=np.float32)
        out = inject_brightness_gradient(x, 0.05)
        assert out[0, 0, 0, 0] == 0.0
        assert out[0, 0, -1, 0] == pytest.approx(0.05)
        assert (np.diff(out[0, 0, :, 0]) >= 0).all()
