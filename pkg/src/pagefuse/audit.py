"""Dataset-quality auditing: exact duplicate detection across splits/classes.

Two methods share one report shape: text duplicates group records whose
extracted text is identical after whitespace/case normalization; image
duplicates group records whose decoded pixel buffers are identical.  Records
with empty canonical text are flagged separately rather than counted as
duplicates of each other, since blank pages and OCR failures would otherwise
fabricate one giant group.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .core import DatasetManifest, Split
from .images import decode_image

__all__ = [
    "DuplicateGroup",
    "AuditReport",
    "normalize_text",
    "find_text_duplicates",
    "find_image_duplicates",
    "cross_split_contamination",
]


def normalize_text(text: str) -> str:
    """Lowercase, collapse all whitespace runs to single spaces, trim."""
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class DuplicateGroup:
    key: str
    members: tuple[tuple[str, Split, int], ...]  # (record id, split, label)

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(self.members))
        if len(self.members) < 2:
            raise ValueError("a duplicate group needs at least two members")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def splits(self) -> set[Split]:
        return {split for _, split, _ in self.members}


@dataclass(frozen=True)
class AuditReport:
    method: str
    groups: tuple[DuplicateGroup, ...]
    per_class_counts: dict[int, int]
    per_split_counts: dict[Split, int]
    total_duplicate_instances: int
    empty_text_ids: tuple[str, ...] = ()
    errors: tuple[tuple[str, str], ...] = ()

    def to_table_text(self, num_classes: int) -> str:
        """Class/count table over duplicate instances, largest classes first."""
        lines = [f"duplicate instances by class ({self.method})", "class  count"]
        ranked = sorted(
            ((label, n) for label, n in self.per_class_counts.items()),
            key=lambda kv: (-kv[1], kv[0]),
        )
        for label, n in ranked:
            lines.append(f"{label:>5}  {n}")
        lines.append(f"total  {self.total_duplicate_instances}")
        if self.empty_text_ids:
            lines.append(f"flagged empty-text records: {len(self.empty_text_ids)}")
        if self.errors:
            lines.append(f"unreadable records: {len(self.errors)}")
        return "\n".join(lines) + "\n"

    def to_tsv(self) -> str:
        lines = ["id\tsplit\tlabel\tgroup_key\tmethod"]
        for group in self.groups:
            for rec_id, split, label in group.members:
                lines.append(f"{rec_id}\t{split.value}\t{label}\t{group.key}\t{self.method}")
        return "\n".join(lines) + "\n"


def _assemble_report(
    method: str,
    keyed: dict[str, list[tuple[str, Split, int]]],
    empty_ids: list[str],
    errors: list[tuple[str, str]],
) -> AuditReport:
    groups = [
        DuplicateGroup(key, tuple(members))
        for key, members in keyed.items()
        if len(members) >= 2
    ]
    groups.sort(key=lambda g: (-g.size, g.key))
    per_class: dict[int, int] = {}
    per_split: dict[Split, int] = {}
    total = 0
    for group in groups:
        for _, split, label in group.members:
            per_class[label] = per_class.get(label, 0) + 1
            per_split[split] = per_split.get(split, 0) + 1
            total += 1
    return AuditReport(
        method=method,
        groups=tuple(groups),
        per_class_counts=per_class,
        per_split_counts=per_split,
        total_duplicate_instances=total,
        empty_text_ids=tuple(sorted(empty_ids)),
        errors=tuple(sorted(errors)),
    )


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def find_text_duplicates(manifest: DatasetManifest) -> AuditReport:
    """Group records by the digest of their normalized text."""
    keyed: dict[str, list[tuple[str, Split, int]]] = {}
    empty_ids: list[str] = []
    errors: list[tuple[str, str]] = []
    for record in manifest.records:
        if record.text_path is None:
            errors.append((record.id, "no text path"))
            continue
        try:
            text = record.text_path.read_text(encoding="utf-8")
        except OSError as exc:
            errors.append((record.id, str(exc)))
            continue
        canonical = normalize_text(text)
        if not canonical:
            empty_ids.append(record.id)
            continue
        key = _digest(canonical.encode("utf-8"))
        keyed.setdefault(key, []).append((record.id, record.split, record.label))
    return _assemble_report("text", keyed, empty_ids, errors)


def _canonical_pixels(path) -> bytes:
    image = decode_image(path)
    pixels = image.pixels
    if image.channels == 3 and np.array_equal(pixels[:, :, 0], pixels[:, :, 1]) and np.array_equal(
        pixels[:, :, 0], pixels[:, :, 2]
    ):
        pixels = pixels[:, :, :1]  # gray stored as RGB collapses to one channel
    header = f"{image.height}x{image.width}x{pixels.shape[2]}:".encode()
    return header + pixels.tobytes()


def find_image_duplicates(manifest: DatasetManifest) -> AuditReport:
    """Group records whose decoded pixel buffers are exactly identical.

    Hashing the decoded buffer (dimensions plus raw intensities) makes the
    match container-independent: the same pixels in PNG and BMP collide.
    """
    keyed: dict[str, list[tuple[str, Split, int]]] = {}
    errors: list[tuple[str, str]] = []
    for record in manifest.records:
        if record.image_path is None:
            errors.append((record.id, "no image path"))
            continue
        try:
            key = _digest(_canonical_pixels(record.image_path))
        except (OSError, ValueError) as exc:
            errors.append((record.id, str(exc)))
            continue
        keyed.setdefault(key, []).append((record.id, record.split, record.label))
    return _assemble_report("image-hash", keyed, [], errors)


def cross_split_contamination(report: AuditReport) -> list[DuplicateGroup]:
    """Groups whose members span more than one split."""
    return [group for group in report.groups if len(group.splits) > 1]
