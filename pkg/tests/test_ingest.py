"""Dataset scanning, manifest IO, preprocessing, and split tests."""

from __future__ import annotations

import logging
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from modalfuse.errors import DataError
from modalfuse.ingest import (
    DatasetManifest,
    RecordRef,
    load_image,
    load_pixels,
    load_record,
    normalize_pixels,
    read_manifest,
    resize_image,
    scan_dataset,
    split_dataset,
    write_manifest,
)
from modalfuse.modality import Modality


def _write_png(path, size=(8, 8), value=128, mode="RGB"):
    shape = (size[1], size[0], 3) if mode == "RGB" else (size[1], size[0])
    Image.fromarray(np.full(shape, value, dtype=np.uint8), mode=mode).save(path)


def _corpus(root, n_cancer, n_normal, size=(8, 8)):
    (root / "cancer").mkdir(parents=True)
    (root / "normal").mkdir(parents=True)
    for i in range(n_cancer):
        _write_png(root / "cancer" / f"c{i:03d}.png", size=size, value=200)
    for i in range(n_normal):
        _write_png(root / "normal" / f"n{i:03d}.png", size=size, value=40)


def _refs(n_cancer, n_normal, modality=Modality.CLINICAL):
    records = [
        RecordRef(id=f"c{i}", modality=modality, label=1, path=f"c{i}.png")
        for i in range(n_cancer)
    ] + [
        RecordRef(id=f"n{i}", modality=modality, label=0, path=f"n{i}.png")
        for i in range(n_normal)
    ]
    return DatasetManifest(modality=modality, records=tuple(records))


class TestScan:
    def test_counts(self, tmp_path):
        _corpus(tmp_path, 10, 5)
        manifest = scan_dataset(tmp_path, Modality.CLINICAL)
        assert len(manifest) == 15
        assert manifest.class_counts == {0: 5, 1: 10}

    def test_lexicographic_string_order(self, tmp_path):
        (tmp_path / "cancer").mkdir()
        (tmp_path / "normal").mkdir()
        _write_png(tmp_path / "cancer" / "10.png")
        _write_png(tmp_path / "cancer" / "2.png")
        _write_png(tmp_path / "normal" / "a.png")
        manifest = scan_dataset(tmp_path, Modality.RADIOLOGICAL)
        assert [r.id for r in manifest.records] == [
            "cancer/10.png",
            "cancer/2.png",
            "normal/a.png",
        ]

    def test_corrupt_file_skipped_with_warning(self, tmp_path, caplog):
        _corpus(tmp_path, 2, 2)
        (tmp_path / "cancer" / "broken.png").write_bytes(b"not a png at all")
        with caplog.at_level(logging.WARNING):
            manifest = scan_dataset(tmp_path, Modality.CLINICAL)
        assert len(manifest) == 4
        assert "skipping undecodable" in caplog.text
        assert "broken.png" in caplog.text

    def test_missing_root(self, tmp_path):
        with pytest.raises(DataError, match="root not found"):
            scan_dataset(tmp_path / "nope", Modality.CLINICAL)

    def test_missing_class_dir(self, tmp_path):
        (tmp_path / "cancer").mkdir()
        _write_png(tmp_path / "cancer" / "a.png")
        with pytest.raises(DataError, match="missing class directory"):
            scan_dataset(tmp_path, Modality.CLINICAL)

    def test_empty_class_dir(self, tmp_path):
        (tmp_path / "cancer").mkdir()
        (tmp_path / "normal").mkdir()
        _write_png(tmp_path / "normal" / "a.png")
        with pytest.raises(DataError, match="class directory empty"):
            scan_dataset(tmp_path, Modality.CLINICAL)

    def test_duplicate_ids_rejected(self):
        ref = RecordRef(id="x", modality=Modality.CLINICAL, label=0, path="x.png")
        with pytest.raises(DataError, match="duplicate record id"):
            DatasetManifest(modality=Modality.CLINICAL, records=(ref, ref))


class TestManifestIO:
    def test_round_trip(self, tmp_path):
        manifest = _refs(3, 2, Modality.HISTOPATHOLOGICAL)
        path = tmp_path / "m.tsv"
        write_manifest(manifest, path)
        assert read_manifest(path) == manifest

    def test_round_trip_with_group_ids(self, tmp_path):
        records = (
            RecordRef("a", Modality.CLINICAL, 1, "a.png", group_id="p1"),
            RecordRef("b", Modality.CLINICAL, 0, "b.png", group_id="p2"),
        )
        manifest = DatasetManifest(Modality.CLINICAL, records)
        path = tmp_path / "m.tsv"
        write_manifest(manifest, path)
        assert read_manifest(path) == manifest

    def test_format_is_headerless_tsv(self, tmp_path):
        path = tmp_path / "m.tsv"
        write_manifest(_refs(1, 1), path)
        raw = path.read_bytes()
        assert b"\r" not in raw
        first = raw.decode("utf-8").splitlines()[0].split("\t")
        assert first == ["c0", "clinical", "1", "c0.png"]

    def test_bad_label(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("a\tclinical\t2\ta.png\n", encoding="utf-8")
        with pytest.raises(DataError, match="label must be 0 or 1"):
            read_manifest(path)

    def test_bad_modality(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("a\tsonogram\t1\ta.png\n", encoding="utf-8")
        with pytest.raises(DataError, match="sonogram"):
            read_manifest(path)

    def test_bad_field_count(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("a\tclinical\t1\n", encoding="utf-8")
        with pytest.raises(DataError, match="tab-separated"):
            read_manifest(path)

    def test_mixed_modalities(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text(
            "a\tclinical\t1\ta.png\nb\tradiological\t0\tb.png\n", encoding="utf-8"
        )
        with pytest.raises(DataError, match="mixed modalities"):
            read_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="manifest not found"):
            read_manifest(tmp_path / "nope.tsv")


def _dicom_gray8(rows, cols, pixels: bytes) -> bytes:
    def el(group, element, vr, value):
        if len(value) % 2:
            value += b"\x00" if vr == b"UI" else b" "
        head = struct.pack("<HH", group, element) + vr
        if vr in (b"OB", b"OW"):
            return head + b"\x00\x00" + struct.pack("<I", len(value)) + value
        return head + struct.pack("<H", len(value)) + value

    return (
        b"\x00" * 128
        + b"DICM"
        + el(0x0002, 0x0010, b"UI", b"1.2.840.10008.1.2.1")
        + el(0x0028, 0x0002, b"US", struct.pack("<H", 1))
        + el(0x0028, 0x0004, b"CS", b"MONOCHROME2")
        + el(0x0028, 0x0010, b"US", struct.pack("<H", rows))
        + el(0x0028, 0x0011, b"US", struct.pack("<H", cols))
        + el(0x0028, 0x0100, b"US", struct.pack("<H", 8))
        + el(0x7FE0, 0x0010, b"OW", pixels)
    )


class TestLoadImage:
    def test_rgb_png(self, tmp_path):
        path = tmp_path / "a.png"
        _write_png(path, size=(4, 3), value=77)
        out = load_image(path)
        assert out.shape == (3, 4, 3)
        assert out.dtype == np.uint8
        assert (out == 77).all()

    def test_grayscale_png_expands_to_rgb(self, tmp_path):
        path = tmp_path / "g.png"
        _write_png(path, size=(4, 4), value=10, mode="L")
        out = load_image(path)
        assert out.shape == (4, 4, 3)
        assert (out == 10).all()

    def test_dicom_file(self, tmp_path):
        path = tmp_path / "scan.dcm"
        path.write_bytes(_dicom_gray8(2, 2, bytes([0, 85, 170, 255])))
        out = load_image(path)
        assert out.shape == (2, 2, 3)
        np.testing.assert_array_equal(out[:, :, 0], [[0, 85], [170, 255]])

    def test_undecodable(self, tmp_path):
        path = tmp_path / "junk.png"
        path.write_bytes(b"nope")
        with pytest.raises(DataError, match="cannot decode"):
            load_image(path)


class TestResize:
    def test_clinical_target(self):
        image = np.random.default_rng(42).integers(0, 256, (400, 400, 3), dtype=np.uint8)
        assert resize_image(image, Modality.CLINICAL).shape == (200, 200, 3)

    def test_non_square_radiological(self):
        image = np.zeros((150, 300, 3), dtype=np.uint8)
        assert resize_image(image, Modality.RADIOLOGICAL).shape == (150, 150, 3)

    def test_identity_at_target_is_bit_exact(self):
        rng = np.random.default_rng(42)
        image = rng.integers(0, 256, (150, 150, 3), dtype=np.uint8)
        out = resize_image(image, Modality.HISTOPATHOLOGICAL)
        np.testing.assert_array_equal(out, image)
        assert out is not image

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        image = rng.integers(0, 256, (317, 203, 3), dtype=np.uint8)
        once = resize_image(image, Modality.CLINICAL)
        twice = resize_image(once, Modality.CLINICAL)
        np.testing.assert_array_equal(once, twice)

    def test_constant_image_stays_constant(self):
        image = np.full((64, 48, 3), 99, dtype=np.uint8)
        out = resize_image(image, Modality.RADIOLOGICAL)
        assert (out == 99).all()

    def test_zero_dimension_rejected(self):
        with pytest.raises(DataError, match="zero-dimension"):
            resize_image(np.zeros((0, 5, 3), dtype=np.uint8), Modality.CLINICAL)

    def test_wrong_rank_rejected(self):
        with pytest.raises(DataError, match="H, W, 3"):
            resize_image(np.zeros((5, 5), dtype=np.uint8), Modality.CLINICAL)


class TestNormalize:
    def test_endpoints_and_fifth(self):
        out = normalize_pixels(np.array([0, 51, 255], dtype=np.uint8))
        assert out[0] == 0.0
        assert out[1] == 51.0 / 255.0
        assert out[1] == pytest.approx(0.2)
        assert out[2] == 1.0
        assert out.dtype == np.float64

    def test_bijective_over_byte_range(self):
        out = normalize_pixels(np.arange(256, dtype=np.uint8))
        assert len(np.unique(out)) == 256
        assert out.min() == 0.0 and out.max() == 1.0

    def test_load_pixels_pipeline(self, tmp_path):
        path = tmp_path / "a.png"
        _write_png(path, size=(64, 64), value=51)
        pixels = load_pixels(path, Modality.CLINICAL)
        assert pixels.shape == (200, 200, 3)
        assert pixels.dtype == np.float64
        np.testing.assert_allclose(pixels, 0.2)

    def test_load_record(self, tmp_path):
        path = tmp_path / "a.png"
        _write_png(path, size=(16, 16), value=255)
        ref = RecordRef("a", Modality.RADIOLOGICAL, 1, str(path))
        record = load_record(ref)
        assert record.pixels.shape == (150, 150, 3)
        assert record.pixels.max() == 1.0
        assert record.label == 1


class TestSplit:
    def test_ninety_ten(self):
        split = split_dataset(_refs(90, 10), ratio=0.9, seed=7)
        assert split.train.class_counts == {0: 9, 1: 81}
        assert split.validation.class_counts == {0: 1, 1: 9}

    def test_deterministic(self):
        manifest = _refs(30, 20)
        a = split_dataset(manifest, 0.8, seed=13)
        b = split_dataset(manifest, 0.8, seed=13)
        assert [r.id for r in a.train.records] == [r.id for r in b.train.records]
        assert [r.id for r in a.validation.records] == [
            r.id for r in b.validation.records
        ]

    def test_seed_changes_partition(self):
        manifest = _refs(30, 20)
        base = {r.id for r in split_dataset(manifest, 0.8, seed=0).train.records}
        assert any(
            {r.id for r in split_dataset(manifest, 0.8, seed=s).train.records} != base
            for s in range(1, 6)
        )

    def test_cannot_stratify(self):
        with pytest.raises(DataError, match="cannot stratify"):
            split_dataset(_refs(1, 5), 0.9, seed=0)

    def test_empty_manifest(self):
        with pytest.raises(DataError, match="empty manifest"):
            split_dataset(DatasetManifest(Modality.CLINICAL), 0.9, seed=0)

    def test_bad_ratio(self):
        with pytest.raises(ValueError, match="ratio"):
            split_dataset(_refs(5, 5), 1.0, seed=0)

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(2, 40),
        st.integers(2, 40),
        st.floats(0.05, 0.95),
        st.integers(0, 2**16),
    )
    def test_partition_invariants(self, n_cancer, n_normal, ratio, seed):
        manifest = _refs(n_cancer, n_normal)
        split = split_dataset(manifest, ratio, seed)
        train_ids = {r.id for r in split.train.records}
        val_ids = {r.id for r in split.validation.records}
        assert not train_ids & val_ids
        assert train_ids | val_ids == {r.id for r in manifest.records}
        for label, count in ((1, n_cancer), (0, n_normal)):
            in_train = split.train.class_counts[label]
            assert 1 <= in_train <= count - 1
            assert abs(in_train - ratio * count) <= 1.0

    def test_group_split_no_straddle(self):
        # 10 label-pure groups of 2: 6 cancer, 4 normal; ratio 0.5 gives
        # 3 + 2 groups to each side.
        records = []
        for g in range(6):
            for j in range(2):
                records.append(
                    RecordRef(f"c{g}_{j}", Modality.CLINICAL, 1, "x", group_id=f"gc{g}")
                )
        for g in range(4):
            for j in range(2):
                records.append(
                    RecordRef(f"n{g}_{j}", Modality.CLINICAL, 0, "x", group_id=f"gn{g}")
                )
        manifest = DatasetManifest(Modality.CLINICAL, tuple(records))
        split = split_dataset(manifest, 0.5, seed=11)
        groups_train = {r.group_id for r in split.train.records}
        groups_val = {r.group_id for r in split.validation.records}
        assert len(groups_train) == 5 and len(groups_val) == 5
        assert not groups_train & groups_val
        assert len(split.train) == 10 and len(split.validation) == 10

    def test_group_tie_counts_as_cancer(self):
        # one mixed 1/1 group joins the cancer stratum, so the normal
        # stratum has a single pure group left and cannot stratify
        records = (
            RecordRef("a", Modality.CLINICAL, 1, "x", group_id="g1"),
            RecordRef("b", Modality.CLINICAL, 0, "x", group_id="g1"),
            RecordRef("c", Modality.CLINICAL, 1, "x", group_id="g2"),
            RecordRef("d", Modality.CLINICAL, 1, "x", group_id="g3"),
            RecordRef("e", Modality.CLINICAL, 0, "x", group_id="g4"),
        )
        with pytest.raises(DataError, match="cannot stratify"):
            split_dataset(DatasetManifest(Modality.CLINICAL, records), 0.5, seed=0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 10), st.integers(2, 10), st.integers(0, 1000))
    def test_grouped_invariants(self, n_cancer_groups, n_normal_groups, seed):
        records = []
        for g in range(n_cancer_groups):
            for j in range(3):
                records.append(
                    RecordRef(f"c{g}_{j}", Modality.CLINICAL, 1, "x", group_id=f"gc{g}")
                )
        for g in range(n_normal_groups):
            for j in range(2):
                records.append(
                    RecordRef(f"n{g}_{j}", Modality.CLINICAL, 0, "x", group_id=f"gn{g}")
                )
        manifest = DatasetManifest(Modality.CLINICAL, tuple(records))
        split = split_dataset(manifest, 0.7, seed)
        train_groups = {r.group_id for r in split.train.records}
        val_groups = {r.group_id for r in split.validation.records}
        assert not train_groups & val_groups
        train_ids = {r.id for r in split.train.records}
        val_ids = {r.id for r in split.validation.records}
        assert not train_ids & val_ids
        assert train_ids | val_ids == {r.id for r in manifest.records}
