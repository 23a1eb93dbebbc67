import struct

import numpy as np
import pytest

from fewtune import (
    ClassRecord,
    CorruptionError,
    DataFormatError,
    EmbeddingDataset,
    ValidationError,
    fill_prompt,
    import_csv_dataset,
    make_rng,
    read_dataset,
    write_dataset,
)
from fewtune.dataset import dataset_bytes

from conftest import random_dataset


def assert_datasets_equal(a: EmbeddingDataset, b: EmbeddingDataset):
    assert (a.d_img, a.d_txt, a.d_joint) == (b.d_img, b.d_txt, b.d_joint)
    assert a.prompt_template == b.prompt_template
    assert (a.pretrained is None) == (b.pretrained is None)
    if a.pretrained is not None:
        np.testing.assert_array_equal(a.pretrained[0], b.pretrained[0])
        np.testing.assert_array_equal(a.pretrained[1], b.pretrained[1])
    assert a.n_classes == b.n_classes
    for ra, rb in zip(a.classes, b.classes):
        assert ra.name == rb.name
        np.testing.assert_array_equal(ra.text_embedding, rb.text_embedding)
        for split in ("train", "support", "query"):
            np.testing.assert_array_equal(getattr(ra, split), getattr(rb, split))


class TestRoundTrip:
    def test_round_trip_identity(self, tmp_path):
        ds = random_dataset(make_rng(1))
        path = tmp_path / "ds.femb"
        write_dataset(ds, path)
        assert_datasets_equal(ds, read_dataset(path))

    @pytest.mark.parametrize("case", range(6))
    def test_round_trip_randomized_shapes(self, tmp_path, case):
        rng = make_rng(100 + case)
        ds = random_dataset(
            rng,
            n_classes=int(rng.integers(2, 6)),
            with_projection=bool(rng.integers(0, 2)),
            d_img=int(rng.integers(1, 9)),
            d_txt=int(rng.integers(1, 7)),
            d_joint=int(rng.integers(1, 4)),
            n_train=int(rng.integers(1, 5)),
            n_support=int(rng.integers(1, 4)),
            n_query=int(rng.integers(1, 4)),
        )
        path = tmp_path / f"ds{case}.femb"
        write_dataset(ds, path)
        assert_datasets_equal(ds, read_dataset(path))

    def test_rewrite_is_byte_identical(self, tmp_path):
        ds = random_dataset(make_rng(2))
        first, second = tmp_path / "a.femb", tmp_path / "b.femb"
        write_dataset(ds, first)
        write_dataset(ds, second)
        assert first.read_bytes() == second.read_bytes()

    def test_projection_flag_byte(self, tmp_path):
        ds = random_dataset(make_rng(3), with_projection=False)
        raw = dataset_bytes(ds)
        assert raw[24] == 0  # magic + 5 u32 header fields, then the flag
        ds2 = random_dataset(make_rng(3), with_projection=True)
        assert dataset_bytes(ds2)[24] == 1

    def test_minimal_two_class_dataset(self, tmp_path):
        ds = random_dataset(make_rng(4), n_classes=2, n_train=1, n_support=1, n_query=1)
        path = tmp_path / "tiny.femb"
        write_dataset(ds, path)
        assert read_dataset(path).n_classes == 2


class TestFormatErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.femb"
        path.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(DataFormatError, match="magic"):
            read_dataset(path)

    def test_unsupported_version(self, tmp_path):
        ds = random_dataset(make_rng(5))
        raw = bytearray(dataset_bytes(ds))
        raw[4:8] = struct.pack("<I", 99)
        path = tmp_path / "v99.femb"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="version 99"):
            read_dataset(path)

    def test_truncation_reports_byte_offset(self, tmp_path):
        ds = random_dataset(make_rng(6))
        raw = dataset_bytes(ds)
        cut = len(raw) - 10
        path = tmp_path / "cut.femb"
        path.write_bytes(raw[:cut])
        with pytest.raises(CorruptionError, match=r"byte \d+"):
            read_dataset(path)

    def test_truncation_returns_no_partial_dataset(self, tmp_path):
        ds = random_dataset(make_rng(7), n_classes=4)
        raw = dataset_bytes(ds)
        path = tmp_path / "half.femb"
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CorruptionError):
            read_dataset(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        ds = random_dataset(make_rng(8))
        path = tmp_path / "pad.femb"
        path.write_bytes(dataset_bytes(ds) + b"junk")
        with pytest.raises(CorruptionError, match="trailing"):
            read_dataset(path)


class TestValidation:
    def test_duplicate_class_names(self):
        ds = random_dataset(make_rng(9), n_classes=3)
        dupe = EmbeddingDataset(
            d_img=ds.d_img, d_txt=ds.d_txt, d_joint=ds.d_joint,
            classes=(ds.classes[0], ds.classes[0], ds.classes[2]),
            prompt_template=ds.prompt_template,
        )
        with pytest.raises(ValidationError, match="duplicate"):
            dupe.validate()

    def test_wrong_text_width_names_class_and_field(self):
        ds = random_dataset(make_rng(10))
        bad = ClassRecord(name="oddball", text_embedding=np.zeros(ds.d_txt + 1),
                          train=ds.classes[0].train, support=ds.classes[0].support,
                          query=ds.classes[0].query)
        broken = EmbeddingDataset(d_img=ds.d_img, d_txt=ds.d_txt, d_joint=ds.d_joint,
                                  classes=ds.classes[1:] + (bad,))
        with pytest.raises(ValidationError, match="oddball.*text_embedding"):
            broken.validate()

    def test_unequal_split_counts_rejected(self):
        ds = random_dataset(make_rng(11))
        bad = ClassRecord(name="short", text_embedding=ds.classes[0].text_embedding,
                          train=ds.classes[0].train[:-1], support=ds.classes[0].support,
                          query=ds.classes[0].query)
        broken = EmbeddingDataset(d_img=ds.d_img, d_txt=ds.d_txt, d_joint=ds.d_joint,
                                  classes=ds.classes[1:] + (bad,))
        with pytest.raises(ValidationError, match="short"):
            broken.validate()

    def test_single_class_rejected(self):
        ds = random_dataset(make_rng(12))
        with pytest.raises(ValidationError, match="at least 2"):
            EmbeddingDataset(d_img=ds.d_img, d_txt=ds.d_txt, d_joint=ds.d_joint,
                             classes=ds.classes[:1]).validate()

    def test_partition_disjointness_survives_serialization(self, tmp_path):
        """No image row may appear in two partitions after a file round-trip."""
        ds = random_dataset(make_rng(13), n_classes=4, n_train=6, n_support=3, n_query=3)
        path = tmp_path / "ds.femb"
        write_dataset(ds, path)
        back = read_dataset(path)
        for rec in back.classes:
            rows = {split: {row.tobytes() for row in getattr(rec, split)} for split in ("train", "support", "query")}
            assert not rows["train"] & rows["support"]
            assert not rows["train"] & rows["query"]
            assert not rows["support"] & rows["query"]


class TestFillPrompt:
    def test_substitutes_verbatim(self):
        assert fill_prompt("A photo of {label}.", "baltimore oriole") == "A photo of baltimore oriole."

    def test_bare_placeholder(self):
        assert fill_prompt("{label}", "x") == "x"

    def test_missing_placeholder_is_an_error(self):
        with pytest.raises(ValidationError):
            fill_prompt("no placeholder", "x")

    def test_repeated_placeholder_is_an_error(self):
        with pytest.raises(ValidationError):
            fill_prompt("{label} and {label}", "x")


class TestCsvImport:
    def test_manifest_round_trip(self, tmp_path):
        ds = random_dataset(make_rng(14), n_classes=2, d_img=4, d_txt=3, d_joint=2)
        root = tmp_path / "csvs"
        root.mkdir()
        manifest = {
            "d_img": ds.d_img, "d_txt": ds.d_txt, "d_joint": ds.d_joint,
            "prompt_template": ds.prompt_template,
            "projection": {"image": "proj_img.csv", "text": "proj_txt.csv"},
            "classes": [],
        }
        np.savetxt(root / "proj_img.csv", ds.pretrained[0], delimiter=",")
        np.savetxt(root / "proj_txt.csv", ds.pretrained[1], delimiter=",")
        for k, rec in enumerate(ds.classes):
            files = {"text": f"c{k}_text.csv", "train": f"c{k}_train.csv",
                     "support": f"c{k}_support.csv", "query": f"c{k}_query.csv"}
            np.savetxt(root / files["text"], rec.text_embedding[None, :], delimiter=",")
            for split in ("train", "support", "query"):
                np.savetxt(root / files[split], getattr(rec, split), delimiter=",")
            manifest["classes"].append({"name": rec.name, **files})
        manifest_path = root / "manifest.json"
        import json

        manifest_path.write_text(json.dumps(manifest))
        imported = import_csv_dataset(manifest_path)
        assert imported.n_classes == ds.n_classes
        for ra, rb in zip(ds.classes, imported.classes):
            np.testing.assert_allclose(getattr(ra, "train"), getattr(rb, "train"), atol=1e-12)

    def test_missing_manifest_field(self, tmp_path):
        bad = tmp_path / "manifest.json"
        bad.write_text('{"d_img": 4}')
        with pytest.raises(DataFormatError):
            import_csv_dataset(bad)
