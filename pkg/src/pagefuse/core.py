"""Dataset model shared by every pipeline stage.

A dataset is described by a manifest file with one page per line: an id, a
split assignment, an integer label, and the paths of the page image and/or
its extracted text.  Manifests are small at the scales this project targets,
so everything is loaded eagerly and kept immutable.

Manifest file format (UTF-8, LF):

    #labels: name0,name1,...
    <id>\t<split>\t<label>\t<image_path>\t<text_path>

``-`` marks an absent path.  Relative paths are resolved against the
directory containing the manifest file.  Lines starting with ``#`` other
than the label header are comments.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "ManifestError",
    "Split",
    "LabelSet",
    "PageRecord",
    "DatasetManifest",
    "ClassScores",
    "argmax_class",
    "load_manifest",
    "save_manifest",
    "filter_split",
]

SCORE_SUM_TOLERANCE = 1e-6


class ManifestError(ValueError):
    """Malformed manifest file or violated dataset invariant."""


class Split(enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"

    @classmethod
    def parse(cls, text: str) -> "Split":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ManifestError(f"unknown split {text!r}") from None


@dataclass(frozen=True)
class LabelSet:
    """Ordered class names; position in the tuple is the class index."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.names:
            raise ManifestError("label set is empty")
        if any(not n for n in self.names):
            raise ManifestError("label names must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise ManifestError("label names must be unique")
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @classmethod
    def default(cls, num_classes: int = 16) -> "LabelSet":
        return cls(tuple(f"class{i}" for i in range(num_classes)))


@dataclass(frozen=True)
class PageRecord:
    """One page: at least one of image/text must be present."""

    id: str
    label: int
    split: Split
    image_path: Optional[Path] = None
    text_path: Optional[Path] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ManifestError("record id must be non-empty")
        if self.image_path is None and self.text_path is None:
            raise ManifestError(f"record {self.id!r} has neither image nor text")


@dataclass(frozen=True)
class DatasetManifest:
    label_set: LabelSet
    records: tuple[PageRecord, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise ManifestError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)
            if not 0 <= rec.label < self.label_set.num_classes:
                raise ManifestError(
                    f"record {rec.id!r} label {rec.label} out of range "
                    f"[0, {self.label_set.num_classes})"
                )

    def __len__(self) -> int:
        return len(self.records)

    def split(self, split: Split) -> "DatasetManifest":
        return filter_split(self, split)


@dataclass(frozen=True)
class ClassScores:
    """Per-class softmax probabilities, the fusion currency of the system."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("class scores must be a non-empty 1-d vector")
        if np.any(v < -1e-12) or np.any(v > 1.0 + 1e-12):
            raise ValueError("class scores must lie in [0, 1]")
        total = float(v.sum())
        if abs(total - 1.0) > SCORE_SUM_TOLERANCE:
            raise ValueError(f"class scores must sum to 1, got {total}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]


def argmax_class(scores: ClassScores) -> int:
    """Index of the highest score; ties go to the lowest class index."""
    return int(np.argmax(scores.values))


def filter_split(manifest: DatasetManifest, split: Split) -> DatasetManifest:
    records = tuple(r for r in manifest.records if r.split is split)
    return DatasetManifest(manifest.label_set, records)


_ABSENT = "-"
_LABEL_HEADER = "#labels:"


def _parse_path(token: str, base: Path) -> Optional[Path]:
    if token == _ABSENT:
        return None
    p = Path(token)
    return p if p.is_absolute() else base / p


def load_manifest(path: Path | str) -> DatasetManifest:
    """Parse and validate a manifest file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    label_set: Optional[LabelSet] = None
    records: list[PageRecord] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith(_LABEL_HEADER):
            if label_set is not None:
                raise ManifestError(f"{path}:{lineno}: duplicate label header")
            names = tuple(n.strip() for n in line[len(_LABEL_HEADER):].split(","))
            label_set = LabelSet(names)
            continue
        if line.startswith("#"):
            continue
        if label_set is None:
            raise ManifestError(f"{path}:{lineno}: record before '#labels:' header")
        fields = line.split("\t")
        if len(fields) != 5:
            raise ManifestError(
                f"{path}:{lineno}: expected 5 tab-separated fields, got {len(fields)}"
            )
        rec_id, split_s, label_s, image_s, text_s = fields
        try:
            label = int(label_s)
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: label {label_s!r} is not an integer") from None
        records.append(
            PageRecord(
                id=rec_id,
                label=label,
                split=Split.parse(split_s),
                image_path=_parse_path(image_s, base),
                text_path=_parse_path(text_s, base),
            )
        )
    if label_set is None:
        raise ManifestError(f"{path}: missing '#labels:' header")
    return DatasetManifest(label_set, tuple(records))


def _format_path(p: Optional[Path], base: Path) -> str:
    if p is None:
        return _ABSENT
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return str(p)


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    """Write a manifest; paths under the manifest directory become relative."""
    path = Path(path)
    base = path.parent.resolve()
    lines = [_LABEL_HEADER + " " + ",".join(manifest.label_set.names)]
    for r in manifest.records:
        img = _format_path(None if r.image_path is None else r.image_path.resolve(), base)
        txt = _format_path(None if r.text_path is None else r.text_path.resolve(), base)
        lines.append("\t".join([r.id, r.split.value, str(r.label), img, txt]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
