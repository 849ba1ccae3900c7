import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabscribe.domain import (
    BLANK,
    TEXT,
    CellId,
    ColumnSchema,
    DatasetManifest,
    DomainError,
    Label,
    ManifestEntry,
    PRESET_SCHEMAS,
    read_manifest,
    resolve_labels,
    stratified_split,
    validate_label,
    write_manifest,
)

MARRIAGE = PRESET_SCHEMAS["marriage_status"]  # 1 digit, codes 1-7


def make_manifest(class_sizes: dict[str, int], schema=None) -> DatasetManifest:
    schema = schema or PRESET_SCHEMAS["occupation"]
    entries = []
    i = 0
    for cls, n in class_sizes.items():
        for _ in range(n):
            entries.append(
                ManifestEntry(
                    CellId("p", i, 0), f"images/p_r{i}_c0.png", (Label(cls, "t1", "2020-01-01T00:00:00Z"),)
                )
            )
            i += 1
    return DatasetManifest(schema, tuple(entries))


class TestValidateLabel:
    def test_code_in_range(self):
        assert validate_label("5", MARRIAGE) is True

    def test_blank_flag(self):
        assert validate_label(BLANK, ColumnSchema("s", 3, None, allows_blank=True)) is True
        assert validate_label(BLANK, ColumnSchema("s", 3, None, allows_blank=False)) is False

    def test_text_flag(self):
        assert validate_label(TEXT, ColumnSchema("s", 3, None, allows_text=False)) is False

    def test_length_mismatch(self):
        assert validate_label("12", PRESET_SCHEMAS["occupation"]) is False

    def test_open_vocabulary_accepts_any_code_of_right_length(self):
        assert validate_label("000", PRESET_SCHEMAS["occupation"]) is True
        assert validate_label("999", PRESET_SCHEMAS["occupation"]) is True

    def test_non_digits_rejected(self):
        assert validate_label("1a3", PRESET_SCHEMAS["occupation"]) is False
        assert validate_label("", PRESET_SCHEMAS["occupation"]) is False

    def test_agrees_with_enumerated_membership_on_presets(self):
        # brute-force oracle: enumerate the full valid set per preset
        for schema in PRESET_SCHEMAS.values():
            if schema.valid_codes is None:
                continue
            universe = ["".join(d) for d in itertools.product("0123456789", repeat=schema.digit_count)]
            enumerated = set(schema.valid_codes)
            if schema.allows_blank:
                enumerated.add(BLANK)
            if schema.allows_text:
                enumerated.add(TEXT)
            for value in universe + [BLANK, TEXT]:
                assert validate_label(value, schema) == (value in enumerated), (schema.name, value)

    @given(st.text(max_size=5))
    def test_total_function(self, value):
        assert validate_label(value, MARRIAGE) in (True, False)


class TestCellId:
    def test_round_trip(self):
        cid = CellId("scan_0042_b", 13, 4)
        assert CellId.parse(str(cid)) == cid

    def test_round_trip_with_confusing_page_id(self):
        cid = CellId("p_r1_c2", 3, 4)
        s = str(cid)
        assert s == "p_r1_c2_r3_c4"
        assert CellId.parse(s) == cid

    def test_rejects_garbage(self):
        with pytest.raises(DomainError):
            CellId.parse("nope")

    @given(st.from_regex(r"[a-z][a-z0-9_]{0,12}", fullmatch=True), st.integers(0, 999), st.integers(0, 99))
    def test_round_trip_property(self, page, r, c):
        cid = CellId(page, r, c)
        assert CellId.parse(str(cid)) == cid


class TestResolveLabels:
    def mk(self, *values):
        return [Label(v, f"l{i}", "2020-01-01T00:00:00Z") for i, v in enumerate(values)]

    def test_majority(self):
        assert resolve_labels(self.mk("042", "045", "042")) == "042"

    def test_tie_is_none(self):
        assert resolve_labels(self.mk("042", "045")) is None

    def test_unanimous(self):
        assert resolve_labels(self.mk("042", "042")) == "042"


class TestStratifiedSplit:
    def test_exact_ratio_single_class(self):
        m = make_manifest({"042": 100})
        train, test = stratified_split(m, 0.2, seed=7)
        assert len(train) == 80 and len(test) == 20

    def test_two_class_example(self):
        m = make_manifest({"001": 10, "002": 5})
        train, test = stratified_split(m, 0.2, seed=1)
        by_class = {}
        for e in test.entries:
            by_class[e.resolved_label] = by_class.get(e.resolved_label, 0) + 1
        assert by_class == {"001": 2, "002": 1}

    def test_large_total_within_one(self):
        # the 2% training dataset scale: 36,065 -> 7,213 +/- 1 at 0.2
        sizes = {}
        rng = np.random.default_rng(0)
        remaining = 36065
        for i in range(200):
            n = int(rng.integers(2, 360)) if i < 199 else remaining
            n = min(n, remaining - (199 - i) * 2)
            sizes[f"{i:03d}"] = n
            remaining -= n
            if remaining <= 0:
                break
        total = sum(sizes.values())
        extra = 36065 - total
        if extra > 0:
            sizes["000"] += extra
        m = make_manifest(sizes)
        assert len(m) == 36065
        train, test = stratified_split(m, 0.2, seed=5)
        assert abs(len(test) - 7213) <= 1
        assert len(train) + len(test) == 36065

    def test_partition_and_determinism(self):
        m = make_manifest({"001": 13, "002": 9, "003": 41})
        t1 = stratified_split(m, 0.3, seed=3)
        t2 = stratified_split(m, 0.3, seed=3)
        assert [e.cell_id for e in t1[0].entries] == [e.cell_id for e in t2[0].entries]
        assert [e.cell_id for e in t1[1].entries] == [e.cell_id for e in t2[1].entries]
        ids_train = {e.cell_id for e in t1[0].entries}
        ids_test = {e.cell_id for e in t1[1].entries}
        assert not (ids_train & ids_test)
        assert len(ids_train) + len(ids_test) == len(m)

    def test_per_class_within_one(self):
        m = make_manifest({"001": 17, "002": 23, "003": 5})
        _, test = stratified_split(m, 0.25, seed=11)
        counts = {}
        for e in test.entries:
            counts[e.resolved_label] = counts.get(e.resolved_label, 0) + 1
        for cls, n in (("001", 17), ("002", 23), ("003", 5)):
            assert abs(counts.get(cls, 0) - 0.25 * n) <= 1

    def test_tiny_class_goes_to_train_with_warning(self):
        m = make_manifest({"001": 1, "002": 10})
        with pytest.warns(UserWarning, match="fewer than 2"):
            train, test = stratified_split(m, 0.2, seed=2)
        assert all(e.resolved_label != "001" for e in test.entries)
        assert sum(1 for e in train.entries if e.resolved_label == "001") == 1

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_partition_property(self, seed):
        m = make_manifest({"001": 8, "002": 12, "003": 20})
        train, test = stratified_split(m, 0.25, seed=seed)
        assert len(train) + len(test) == len(m)
        assert not ({e.cell_id for e in train.entries} & {e.cell_id for e in test.entries})


class TestManifestIO:
    def test_round_trip_sorted_and_byte_identical(self, tmp_path, occupation_schema):
        entries = [
            ManifestEntry(CellId("p", i, 0), f"img{i}.png", (Label("042", "a", "2020-01-01T00:00:00Z"),))
            for i in (3, 1, 2)
        ]
        for e in entries:
            (tmp_path / e.image).write_bytes(b"png")
        m = DatasetManifest(occupation_schema, tuple(entries))
        p1, p2 = tmp_path / "m1.jsonl", tmp_path / "m2.jsonl"
        write_manifest(m, p1)
        write_manifest(m, p2)
        assert p1.read_bytes() == p2.read_bytes()
        back = read_manifest(p1, occupation_schema)
        assert {str(e.cell_id) for e in back.entries} == {str(e.cell_id) for e in entries}
        assert [str(e.cell_id) for e in back.entries] == sorted(str(e.cell_id) for e in entries)

    def test_missing_image_rejected(self, tmp_path, occupation_schema):
        m = DatasetManifest(
            occupation_schema,
            (ManifestEntry(CellId("p", 0, 0), "missing.png", (Label("042", "a", "t"),)),),
        )
        with pytest.raises(DomainError, match="missing"):
            write_manifest(m, tmp_path / "m.jsonl")

    def test_duplicate_cell_ids_rejected(self, occupation_schema):
        e = ManifestEntry(CellId("p", 0, 0), "x.png")
        with pytest.raises(DomainError, match="duplicate"):
            DatasetManifest(occupation_schema, (e, e))


class TestSchemas:
    def test_schema_invariants_enforced(self):
        with pytest.raises(DomainError):
            ColumnSchema("bad", 2, frozenset({"123"}))  # wrong length
        with pytest.raises(DomainError):
            ColumnSchema("bad", 0)

    def test_presets_cover_table_columns(self):
        assert set(PRESET_SCHEMAS) == {
            "position_in_household",
            "resident",
            "marriage_status",
            "employment",
            "business",
            "lower_education",
            "higher_education",
            "nationality",
            "occupation",
        }
        assert PRESET_SCHEMAS["nationality"].digit_count == 2
        assert "07" in PRESET_SCHEMAS["nationality"].valid_codes
        assert PRESET_SCHEMAS["occupation"].valid_codes is None

    def test_occupation_codes_configurable(self):
        s = PRESET_SCHEMAS["occupation"].with_codes({"042", "555"})
        assert validate_label("042", s)
        assert not validate_label("043", s)
