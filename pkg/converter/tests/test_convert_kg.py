"""Triple conversion: label TSVs, id sidecars, and manifest counts."""

import json
import pickle
from pathlib import Path

import pytest

from conftest_data import ENTITIES_TSV, RELATIONS_TSV
from nsmp_convert import ConversionError
from nsmp_convert.convert import EngineIds, convert_kg


class TestConvertKg:
    def test_tsv_lines_mirror_the_archive_verbatim(self, tuple_archive, tmp_path):
        out = tmp_path / "out"
        convert_kg(tuple_archive, out)
        assert (out / "train.tsv").read_text() == (
            "dave\tknows\tbob\n" "bob\tknows\tcarol\n" "bob\tleads\talice\n"
        )
        assert (out / "valid.tsv").read_text() == "carol\tleads\talice\n"
        assert (out / "test.tsv").read_text() == (
            "dave\tleads\terin\n" "bob\tknows\talice\n"
        )

    def test_sidecars_follow_first_appearance_interning(self, tuple_archive, tmp_path):
        out = tmp_path / "out"
        convert_kg(tuple_archive, out)
        assert (out / "entities.tsv").read_text() == ENTITIES_TSV
        assert (out / "relations.tsv").read_text() == RELATIONS_TSV

    def test_summary_and_manifest_counts(self, tuple_archive, tmp_path):
        out = tmp_path / "out"
        summary = convert_kg(tuple_archive, out)
        assert summary == {
            "entities": 5,
            "relations": 2,
            "triples": {"train": 3, "valid": 1, "test": 2, "total": 6},
        }
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["kg"] == summary

    def test_rerun_is_byte_identical(self, tuple_archive, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        convert_kg(tuple_archive, a)
        convert_kg(tuple_archive, b)
        for name in ("train.tsv", "valid.tsv", "test.tsv", "entities.tsv", "relations.tsv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_missing_files_are_reported_together(self, tmp_path):
        src = tmp_path / "empty"
        src.mkdir()
        (src / "train.txt").write_text("")
        with pytest.raises(ConversionError) as err:
            convert_kg(src, tmp_path / "out")
        message = str(err.value)
        for name in ("valid.txt", "test.txt", "id2ent.pkl", "id2rel.pkl"):
            assert name in message
        assert "train.txt" not in message.split("(expected files:")[0]

    def test_unmapped_id_is_an_error(self, tuple_archive, tmp_path):
        (tuple_archive / "train.txt").write_text("3\t0\t99\n")
        with pytest.raises(ConversionError, match="train.txt:1"):
            convert_kg(tuple_archive, tmp_path / "out")

    def test_malformed_line_is_an_error(self, tuple_archive, tmp_path):
        (tuple_archive / "valid.txt").write_text("1 2\n")
        with pytest.raises(ConversionError, match="valid.txt:1"):
            convert_kg(tuple_archive, tmp_path / "out")

    def test_blank_lines_are_skipped(self, tuple_archive, tmp_path):
        original = (tuple_archive / "valid.txt").read_text()
        (tuple_archive / "valid.txt").write_text("\n" + original + "   \n")
        summary = convert_kg(tuple_archive, tmp_path / "out")
        assert summary["triples"]["valid"] == 1

    def test_entity_label_with_tab_is_rejected(self, tuple_archive, tmp_path):
        bad = dict(pickle.loads((tuple_archive / "id2ent.pkl").read_bytes()))
        bad[0] = "al\tice"
        (tuple_archive / "id2ent.pkl").write_bytes(pickle.dumps(bad))
        with pytest.raises(ConversionError, match="tab"):
            convert_kg(tuple_archive, tmp_path / "out")

    def test_relation_label_with_formula_character_is_rejected(
        self, tuple_archive, tmp_path
    ):
        bad = dict(pickle.loads((tuple_archive / "id2rel.pkl").read_bytes()))
        bad[1] = "leads(strongly)"
        (tuple_archive / "id2rel.pkl").write_bytes(pickle.dumps(bad))
        with pytest.raises(ConversionError, match="leads"):
            convert_kg(tuple_archive, tmp_path / "out")

    def test_id_map_must_be_int_to_str(self, tuple_archive, tmp_path):
        (tuple_archive / "id2ent.pkl").write_bytes(pickle.dumps({"alice": 0}))
        with pytest.raises(ConversionError, match="int ids"):
            convert_kg(tuple_archive, tmp_path / "out")

    def test_corrupt_pickle_is_an_error(self, tuple_archive, tmp_path):
        (tuple_archive / "id2rel.pkl").write_bytes(b"not a pickle")
        with pytest.raises(ConversionError, match="pickle"):
            convert_kg(tuple_archive, tmp_path / "out")


class TestEngineIds:
    def test_round_trip_through_sidecars(self, converted_kg):
        ids = EngineIds.load(converted_kg)
        assert ids.entity_labels == ["dave", "bob", "carol", "alice", "erin"]
        assert ids.relation_ids == {"knows": 0, "leads": 1}

    def test_missing_sidecars_point_at_the_kg_step(self, tmp_path):
        with pytest.raises(ConversionError, match="kg step"):
            EngineIds.load(tmp_path)
