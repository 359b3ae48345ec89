"""Duplicate auditing: normalization, grouping, planted-distribution fixture."""

import numpy as np
import pytest
from PIL import Image

from pagefuse.core import DatasetManifest, LabelSet, PageRecord, Split, load_manifest
from pagefuse.audit import (
    cross_split_contamination,
    find_image_duplicates,
    find_text_duplicates,
    normalize_text,
)
from synthdata import (
    TABLE_VI_CLASS_COUNTS,
    TABLE_VI_SPLITS,
    TABLE_VI_TOTAL,
    build_duplicate_audit_fixture,
)


class TestNormalizeText:
    def test_whitespace_and_case(self):
        assert normalize_text("Image  Not\nAvailable ") == "image not available"

    def test_empty(self):
        assert normalize_text("") == ""

    def test_linebreak_variants_collide(self):
        assert normalize_text("a b\nc") == normalize_text("a\tb c")


def text_manifest(tmp_path, contents, splits=None, labels=None):
    (tmp_path / "texts").mkdir(exist_ok=True)
    records = []
    for i, body in enumerate(contents):
        p = tmp_path / "texts" / f"r{i}.txt"
        p.write_text(body, encoding="utf-8")
        records.append(
            PageRecord(
                f"r{i}",
                labels[i] if labels else 0,
                splits[i] if splits else Split.TRAIN,
                None,
                p,
            )
        )
    c = (max(labels) + 1) if labels else 1
    return DatasetManifest(LabelSet(tuple(f"c{k}" for k in range(c))), tuple(records))


class TestFindTextDuplicates:
    def test_one_pair_among_five(self, tmp_path):
        manifest = text_manifest(tmp_path, ["same body", "unique a", "Same  BODY", "unique b", "unique c"])
        report = find_text_duplicates(manifest)
        assert len(report.groups) == 1
        assert report.groups[0].size == 2
        assert report.total_duplicate_instances == 2

    def test_clean_corpus_empty_report(self, tmp_path):
        manifest = text_manifest(tmp_path, ["one", "two", "three"])
        report = find_text_duplicates(manifest)
        assert report.groups == ()
        assert report.total_duplicate_instances == 0

    def test_empty_text_flagged_not_grouped(self, tmp_path):
        manifest = text_manifest(tmp_path, ["", "  \n", "real body", "real body"])
        report = find_text_duplicates(manifest)
        assert set(report.empty_text_ids) == {"r0", "r1"}
        assert len(report.groups) == 1  # only the real duplicates group

    def test_unreadable_collected_not_fatal(self, tmp_path):
        manifest = text_manifest(tmp_path, ["a", "b"])
        manifest.records[0].text_path.unlink()
        report = find_text_duplicates(manifest)
        assert len(report.errors) == 1

    def test_order_independent_output(self, tmp_path):
        contents = ["x", "y", "x", "z", "y", "x"]
        manifest = text_manifest(tmp_path, contents)
        report_a = find_text_duplicates(manifest)
        reordered = DatasetManifest(manifest.label_set, tuple(reversed(manifest.records)))
        report_b = find_text_duplicates(reordered)
        assert [g.key for g in report_a.groups] == [g.key for g in report_b.groups]
        assert [g.size for g in report_a.groups] == [g.size for g in report_b.groups]

    def test_totals_consistent(self, tmp_path):
        contents = ["a", "a", "a", "b", "b", "c"]
        labels = [0, 0, 1, 1, 1, 0]
        manifest = text_manifest(tmp_path, contents, labels=labels)
        report = find_text_duplicates(manifest)
        assert report.total_duplicate_instances == sum(g.size for g in report.groups)
        assert sum(report.per_class_counts.values()) == report.total_duplicate_instances


@pytest.fixture(scope="module")
def report(tmp_path_factory):
    manifest_path = build_duplicate_audit_fixture(tmp_path_factory.mktemp("audit"))
    return find_text_duplicates(load_manifest(manifest_path))


class TestPlantedTableFixture:
    def test_single_planted_group(self, report):
        assert len(report.groups) == 1
        assert report.groups[0].size == TABLE_VI_TOTAL == 426

    def test_per_class_counts_match_plan(self, report):
        assert report.per_class_counts == TABLE_VI_CLASS_COUNTS

    def test_per_split_counts_match_plan(self, report):
        assert report.per_split_counts == TABLE_VI_SPLITS
        assert report.per_split_counts[Split.TRAIN] == 373
        assert report.per_split_counts[Split.TEST] == 53

    def test_contamination_flags_exactly_the_planted_group(self, report):
        contaminated = cross_split_contamination(report)
        assert len(contaminated) == 1
        assert contaminated[0].key == report.groups[0].key

    def test_empty_text_records_flagged(self, report):
        assert len(report.empty_text_ids) == 2


class TestCrossSplitContamination:
    def test_within_split_group_excluded(self, tmp_path):
        manifest = text_manifest(tmp_path, ["dup", "dup", "other"], splits=[Split.TRAIN] * 3)
        report = find_text_duplicates(manifest)
        assert cross_split_contamination(report) == []

    def test_empty_report(self, tmp_path):
        manifest = text_manifest(tmp_path, ["a", "b"])
        assert cross_split_contamination(find_text_duplicates(manifest)) == []


def image_manifest(tmp_path, arrays_and_formats, splits=None):
    (tmp_path / "imgs").mkdir(exist_ok=True)
    records = []
    for i, (arr, fmt) in enumerate(arrays_and_formats):
        p = tmp_path / "imgs" / f"i{i}.{fmt.lower()}"
        Image.fromarray(arr).save(p, format=fmt)
        records.append(
            PageRecord(f"i{i}", 0, splits[i] if splits else Split.TRAIN, p, None)
        )
    return DatasetManifest(LabelSet(("a",)), tuple(records))


class TestFindImageDuplicates:
    def test_identical_files_grouped(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.integers(0, 256, size=(20, 15)).astype(np.uint8)
        manifest = image_manifest(tmp_path, [(arr, "PNG"), (arr.copy(), "PNG")])
        report = find_image_duplicates(manifest)
        assert len(report.groups) == 1 and report.groups[0].size == 2

    def test_cross_container_pixels_grouped(self, tmp_path):
        rng = np.random.default_rng(1)
        arr = rng.integers(0, 256, size=(12, 18)).astype(np.uint8)
        manifest = image_manifest(tmp_path, [(arr, "PNG"), (arr.copy(), "BMP")])
        report = find_image_duplicates(manifest)
        assert len(report.groups) == 1
        assert report.method == "image-hash"

    def test_near_but_not_exact_not_grouped(self, tmp_path):
        rng = np.random.default_rng(2)
        arr = rng.integers(0, 256, size=(12, 18)).astype(np.uint8)
        nudged = arr.copy()
        nudged[0, 0] ^= 1
        manifest = image_manifest(tmp_path, [(arr, "PNG"), (nudged, "PNG")])
        report = find_image_duplicates(manifest)
        assert report.groups == ()

    def test_gray_stored_as_rgb_collides(self, tmp_path):
        rng = np.random.default_rng(3)
        gray = rng.integers(0, 256, size=(10, 10)).astype(np.uint8)
        rgb = np.repeat(gray[:, :, None], 3, axis=2)
        manifest = image_manifest(tmp_path, [(gray, "PNG"), (rgb, "PNG")])
        report = find_image_duplicates(manifest)
        assert len(report.groups) == 1

    def test_decode_failure_collected(self, tmp_path):
        rng = np.random.default_rng(4)
        arr = rng.integers(0, 256, size=(8, 8)).astype(np.uint8)
        manifest = image_manifest(tmp_path, [(arr, "PNG"), (arr, "PNG")])
        manifest.records[0].image_path.write_bytes(b"junk")
        report = find_image_duplicates(manifest)
        assert len(report.errors) == 1
        assert report.groups == ()


class TestRefinementProperty:
    def test_pixel_groups_refine_text_groups_under_deterministic_ocr(self, tmp_path):
        """With text derived deterministically from pixels, records sharing
        pixels must share text, so every pixel-duplicate group sits inside
        one text-duplicate group."""
        rng = np.random.default_rng(5)
        (tmp_path / "imgs").mkdir()
        (tmp_path / "texts").mkdir()
        base = rng.integers(0, 256, size=(16, 16)).astype(np.uint8)
        same_mean = base.copy()
        same_mean[0, 0] += 1
        same_mean[0, 1] -= 1  # different pixels, same mean
        pixel_sets = [base, base.copy(), same_mean, rng.integers(0, 256, (16, 16)).astype(np.uint8)]
        records = []
        for i, arr in enumerate(pixel_sets):
            img = tmp_path / "imgs" / f"d{i}.png"
            Image.fromarray(arr).save(img)
            text = tmp_path / "texts" / f"d{i}.txt"
            # deterministic stand-in for an OCR engine: a coarse pixel statistic
            text.write_text(f"mean bucket {int(arr.mean())}")
            records.append(PageRecord(f"d{i}", 0, Split.TRAIN, img, text))
        manifest = DatasetManifest(LabelSet(("a",)), tuple(records))

        pixel_report = find_image_duplicates(manifest)
        text_report = find_text_duplicates(manifest)
        text_groups = [set(m[0] for m in g.members) for g in text_report.groups]
        for group in pixel_report.groups:
            ids = set(m[0] for m in group.members)
            assert any(ids <= tg for tg in text_groups), (
                f"pixel group {ids} not contained in any text group {text_groups}"
            )
        # and the refinement is strict here: d2 joins d0/d1 by text only
        assert {"d0", "d1", "d2"} in text_groups
        assert all(g.size == 2 for g in pixel_report.groups)


class TestReportFormats:
    def test_table_text_totals(self, tmp_path):
        manifest = text_manifest(tmp_path, ["a", "a", "b", "b", "b"], labels=[0, 0, 1, 1, 1])
        report = find_text_duplicates(manifest)
        table = report.to_table_text(num_classes=2)
        assert "total  5" in table

    def test_tsv_one_row_per_instance(self, tmp_path):
        manifest = text_manifest(tmp_path, ["a", "a", "b"])
        report = find_text_duplicates(manifest)
        lines = report.to_tsv().splitlines()
        assert lines[0] == "id\tsplit\tlabel\tgroup_key\tmethod"
        assert len(lines) == 3
