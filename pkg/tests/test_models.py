import numpy as np
import pytest

from tabscribe.digitseg import SegmentationOutcome
from tabscribe.domain import BLANK, TEXT, CellId, CellImage, PRESET_SCHEMAS
from tabscribe.models import (
    ALPHABET,
    ArchPreset,
    BLANK_INDEX,
    ClassConfidence,
    ConfigError,
    ManualRoute,
    SequencePrediction,
    TrainConfig,
    _canonical_decode,
    build,
    compose_3x1,
    encode_sequence_target,
    load_model,
    predict,
    predict_batch,
    prediction_record,
    read_predictions,
    save_model,
    train,
    write_predictions,
)

SCHEMA = PRESET_SCHEMAS["occupation"]
DIGIT_SCHEMA = PRESET_SCHEMAS["marriage_status"]


class TestAlphabet:
    def test_thirteen_classes_blank_last(self):
        assert len(ALPHABET) == 13
        assert ALPHABET[BLANK_INDEX] == "-"
        assert BLANK in ALPHABET and TEXT in ALPHABET

    def test_encode_targets(self):
        assert encode_sequence_target("042") == [0, 4, 2]
        assert encode_sequence_target(BLANK) == [10]
        assert encode_sequence_target(TEXT) == [11]


class TestBuild:
    def test_sequential_output_shape(self):
        m = build(ArchPreset.THREE_DIGIT_SEQUENTIAL, SCHEMA, seed=0, input_hw=(48, 128))
        assert m.net.output_shape == (32, 13)  # two pools: 128 -> 64 -> 32 timesteps

    def test_three_by_one_ten_way(self):
        m = build(ArchPreset.THREE_BY_ONE, DIGIT_SCHEMA, seed=0)
        assert m.net.output_shape == (10,)
        assert m.vocab == tuple(str(d) for d in range(10))
        assert m.lr == pytest.approx(1e-4)

    def test_three_digit_vocab_head(self):
        vocab = [f"{i:03d}" for i in range(265)]
        m = build(ArchPreset.THREE_DIGIT, SCHEMA, vocab=vocab, seed=0)
        assert m.net.output_shape == (265,)
        assert m.lr == pytest.approx(1e-3)

    def test_three_digit_empty_vocab_rejected(self):
        with pytest.raises(ConfigError):
            build(ArchPreset.THREE_DIGIT, SCHEMA, vocab=[], seed=0)

    def test_vocab_sorted_bijection(self):
        m = build(ArchPreset.THREE_DIGIT, SCHEMA, vocab=["555", "042", "042"], seed=0)
        assert m.vocab == ("042", "555")


class TestCanonicalDecode:
    @pytest.mark.parametrize(
        "raw,digits,expected",
        [
            ("042", 3, "042"),
            ("12", 3, None),
            ("1234", 3, None),
            ("", 3, None),
            (BLANK, 3, BLANK),
            (TEXT, 3, TEXT),
            ("04B", 3, None),
            ("7", 1, "7"),
        ],
    )
    def test_cases(self, raw, digits, expected):
        assert _canonical_decode(raw, digits) == expected


def tiny_sequential(seed=0):
    return build(ArchPreset.THREE_DIGIT_SEQUENTIAL, SCHEMA, seed=seed, input_hw=(16, 32))


def make_cell(seed=0, hw=(16, 32)):
    rng = np.random.default_rng(seed)
    return CellImage(CellId("t", seed, 0), rng.random(hw), state="preprocessed")


class TestPredict:
    def test_sequential_prediction_shape(self):
        m = tiny_sequential()
        pred = predict(m, make_cell())
        assert isinstance(pred, SequencePrediction)
        assert len(pred.confidences) == len(pred.raw)
        if pred.value is not None:
            assert pred.value in (BLANK, TEXT) or len(pred.value) == 3

    def test_one_to_one_prediction(self):
        m = build(ArchPreset.THREE_BY_ONE, DIGIT_SCHEMA, seed=0, input_hw=(16, 16))
        pred = predict(m, make_cell(hw=(16, 16)))
        assert isinstance(pred, ClassConfidence)
        assert pred.label == m.vocab[pred.class_index]
        assert pred.confidence == pytest.approx(max(pred.distribution))
        assert abs(sum(pred.distribution) - 1) < 1e-9

    def test_batch_matches_single(self):
        m = tiny_sequential()
        cells = [make_cell(i) for i in range(4)]
        singles = [predict(m, c) for c in cells]
        batched = predict_batch(m, cells)
        for a, b in zip(singles, batched):
            assert a.raw == b.raw
            assert np.allclose(a.confidences, b.confidences)

    def test_wrong_input_size_raises(self):
        from tabscribe.neuro import ShapeError

        m = tiny_sequential()
        with pytest.raises(ShapeError):
            predict(m, make_cell(hw=(48, 128)))


class TestCompose3x1:
    def test_skipped_routes_manual(self):
        outcome = SegmentationOutcome(cell_id=CellId("t", 0, 0), reason="not trimodal")
        m = build(ArchPreset.THREE_BY_ONE, DIGIT_SCHEMA, seed=0, input_hw=(32, 32))
        result = compose_3x1(outcome, m)
        assert isinstance(result, ManualRoute)
        assert result.reason == "unsegmentable"

    def test_composition_structure(self):
        crops = tuple(make_cell(i, hw=(32, 32)) for i in range(3))
        outcome = SegmentationOutcome(cell_id=CellId("t", 9, 0), crops=crops, cuts=(10, 20))
        m = build(ArchPreset.THREE_BY_ONE, DIGIT_SCHEMA, seed=0, input_hw=(32, 32))
        result = compose_3x1(outcome, m)
        assert isinstance(result, SequencePrediction)
        assert result.cell_id == CellId("t", 9, 0)
        assert len(result.value) == 3 and result.value.isdigit()
        assert len(result.confidences) == 3
        digit_preds = predict_batch(m, list(crops))
        assert result.value == "".join(p.label for p in digit_preds)
        assert result.confidences == tuple(p.confidence for p in digit_preds)


class TestCheckpointRoundTrip:
    def test_bit_identical_predictions(self, tmp_path):
        m = tiny_sequential(seed=3)
        x = np.random.default_rng(0).random((4, 16, 32, 1)).astype(np.float32)
        before = m.net.forward(x)
        path = tmp_path / "m.ckpt"
        ckpt_id = save_model(m, path)
        loaded = load_model(path, SCHEMA)
        after = loaded.net.forward(x)
        assert (before == after).all()
        assert loaded.checkpoint_id == ckpt_id
        assert loaded.vocab == m.vocab
        assert loaded.input_hw == m.input_hw

    def test_one_to_one_round_trip(self, tmp_path):
        m = build(ArchPreset.THREE_DIGIT, SCHEMA, vocab=["042", "555", "120"], seed=1, input_hw=(32, 64))
        x = np.random.default_rng(1).random((2, 32, 64, 1)).astype(np.float32)
        before = m.net.forward(x)
        save_model(m, tmp_path / "m.ckpt")
        loaded = load_model(tmp_path / "m.ckpt", SCHEMA)
        assert (before == loaded.net.forward(x)).all()
        assert loaded.vocab == ("042", "120", "555")


def tiny_training_data(n=48, hw=(16, 32), seed=0):
    # two visually distinct synthetic classes: left bar vs right bar
    rng = np.random.default_rng(seed)
    xs, labels = [], []
    for i in range(n):
        img = np.zeros(hw, dtype=np.float32)
        if i % 2 == 0:
            img[:, 2:6] = 1.0
            labels.append(BLANK)
        else:
            img[:, -6:-2] = 1.0
            labels.append(TEXT)
        img += rng.normal(0, 0.05, hw).astype(np.float32)
        xs.append(np.clip(img, 0, 1))
    x = np.stack(xs)[:, :, :, None]
    return x, labels


class TestTrain:
    def test_history_and_determinism(self):
        x, labels = tiny_training_data()
        cfg = TrainConfig(max_epochs=3, batch_size=16, seed=5, patience=10)
        hists = []
        params = []
        for _ in range(2):
            m = tiny_sequential(seed=5)
            m, hist = train(m, x[:32], labels[:32], x[32:], labels[32:], cfg)
            hists.append([(h.train_loss, h.val_loss) for h in hist])
            params.append(np.concatenate([p.value.reshape(-1) for p in m.net.parameters()]))
        assert hists[0] == hists[1]
        assert (params[0] == params[1]).all()
        assert len(hists[0]) == 3

    def test_learns_separable_classes(self):
        x, labels = tiny_training_data(n=64)
        m = tiny_sequential(seed=2)
        cfg = TrainConfig(max_epochs=14, batch_size=16, seed=2, patience=14)
        m, hist = train(m, x[:48], labels[:48], x[48:], labels[48:], cfg)
        assert hist[-1].val_accuracy >= 0.9

    def test_best_checkpoint_restored(self):
        x, labels = tiny_training_data()
        m = tiny_sequential(seed=7)
        cfg = TrainConfig(max_epochs=4, batch_size=16, seed=7, patience=10)
        m, hist = train(m, x[:32], labels[:32], x[32:], labels[32:], cfg)
        from tabscribe.models import evaluate_loss

        val_loss, _ = evaluate_loss(m, x[32:], labels[32:])
        best = min(h.val_loss for h in hist)
        assert val_loss == pytest.approx(best, rel=1e-5)


class TestPredictionExport:
    def test_round_trip(self, tmp_path):
        preds = [
            SequencePrediction(CellId("p", 0, 0), "042", "042", (0.9, 0.8, 0.7), "ck"),
            SequencePrediction(CellId("p", 1, 0), None, "04", (0.9, 0.8), "ck"),
            ManualRoute(CellId("p", 2, 0), "unsegmentable"),
        ]
        path = tmp_path / "preds.jsonl"
        write_predictions(preds, path)
        back = read_predictions(path)
        assert len(back) == 3
        assert isinstance(back[2], ManualRoute)
        assert back[0].value == "042"
        assert back[1].value is None and back[1].raw == "04"

    def test_record_fields(self):
        rec = prediction_record(
            SequencePrediction(CellId("p", 0, 0), "042", "042", (0.9,), "ck")
        )
        assert set(rec) == {"cell_id", "value", "raw", "confidences", "checkpoint", "reason"}
