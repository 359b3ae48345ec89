"""Text extraction: resize-for-OCR and the external OCR subprocess.

OCR is an external command behind a template with ``{input}`` and
``{output}`` placeholders, invoked once per page on an image resized so its
longest side hits a fixed pixel target.  The default template targets a
tesseract-compatible CLI with the combined legacy/LSTM engine and standard
page segmentation (``--oem 3 --psm 3``); since that family of tools appends
``.txt`` to the output base, the reader accepts either ``{output}`` or
``{output}.txt``.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .core import DatasetManifest, PageRecord
from .images import PageImage, decode_image, encode_png, resize_image

__all__ = [
    "OcrConfig",
    "OcrError",
    "ExtractionSummary",
    "resize_for_ocr",
    "extract_text",
    "extract_corpus",
    "DEFAULT_LONGEST_SIDE",
    "DEFAULT_COMMAND_TEMPLATE",
]

DEFAULT_LONGEST_SIDE = 3300
DEFAULT_COMMAND_TEMPLATE = "tesseract {input} {output}"
# combined legacy/LSTM engine, standard page segmentation
DEFAULT_ENGINE_ARGS = "--oem 3 --psm 3"


class OcrError(RuntimeError):
    """External OCR command failed for one record."""


@dataclass(frozen=True)
class OcrConfig:
    command_template: str = DEFAULT_COMMAND_TEMPLATE
    longest_side_px: int = DEFAULT_LONGEST_SIDE
    engine_args: str = DEFAULT_ENGINE_ARGS  # opaque, appended to the command

    def __post_init__(self) -> None:
        if self.longest_side_px < 1:
            raise ValueError("longest_side_px must be positive")
        for placeholder in ("{input}", "{output}"):
            if self.command_template.count(placeholder) != 1:
                raise ValueError(
                    f"command template must contain {placeholder} exactly once"
                )


def resize_for_ocr(image: PageImage, longest_side_px: int = DEFAULT_LONGEST_SIDE) -> PageImage:
    """Scale so the longest dimension equals the target, preserving aspect.

    The short side rounds to the nearest pixel (minimum 1).  Images already
    at the target keep their pixels untouched; everything else, above or
    below, is resampled to exactly the target.
    """
    if longest_side_px < 1:
        raise ValueError("longest_side_px must be positive")
    h, w = image.height, image.width
    if h >= w:
        out_h = longest_side_px
        out_w = max(1, round(w * longest_side_px / h))
    else:
        out_w = longest_side_px
        out_h = max(1, round(h * longest_side_px / w))
    return resize_image(image, out_h, out_w)


def _run_ocr_command(config: OcrConfig, input_path: Path, output_path: Path) -> tuple[str, bool]:
    """Returns (text, replaced) where replaced marks non-UTF-8 output bytes."""
    tokens = [
        token.format(input=str(input_path), output=str(output_path))
        for token in shlex.split(config.command_template)
    ] + shlex.split(config.engine_args)
    try:
        proc = subprocess.run(tokens, capture_output=True, timeout=600)
    except FileNotFoundError as exc:
        raise OcrError(f"OCR command not found: {tokens[0]!r}") from exc
    except subprocess.TimeoutExpired as exc:
        raise OcrError(f"OCR command timed out: {' '.join(tokens)}") from exc
    if proc.returncode != 0:
        stderr = proc.stderr.decode("utf-8", errors="replace").strip()
        raise OcrError(
            f"OCR command exited with status {proc.returncode}: {stderr or '(no diagnostics)'}"
        )
    for candidate in (output_path, output_path.with_name(output_path.name + ".txt")):
        if candidate.exists():
            raw = candidate.read_bytes()
            try:
                return raw.decode("utf-8"), False
            except UnicodeDecodeError:
                return raw.decode("utf-8", errors="replace"), True
    raise OcrError(f"OCR command produced no output at {output_path}(.txt)")


def _extract_text_detailed(record: PageRecord, config: OcrConfig) -> tuple[str, bool]:
    if record.image_path is None:
        raise OcrError(f"record {record.id!r} has no image to extract from")
    image = resize_for_ocr(decode_image(record.image_path), config.longest_side_px)
    with tempfile.TemporaryDirectory(prefix="pagefuse-ocr-") as tmp:
        input_path = Path(tmp) / "page.png"
        output_path = Path(tmp) / "page-text"
        encode_png(image, input_path)
        return _run_ocr_command(config, input_path, output_path)


def extract_text(record: PageRecord, config: OcrConfig) -> str:
    """Resize the record's image, run the external OCR command, return text.

    Output bytes that are not valid UTF-8 come back with replacement
    characters; extract_corpus flags such records in its summary.
    """
    return _extract_text_detailed(record, config)[0]


@dataclass
class ExtractionSummary:
    extracted: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)
    replaced: list[str] = field(default_factory=list)  # non-UTF-8 output, replaced

    @property
    def ok(self) -> bool:
        return not self.failed

    def to_tsv(self) -> str:
        flagged = set(self.replaced)
        lines = ["id\tstatus\tdetail"]
        for rec_id in self.extracted:
            detail = "non-utf8-output-replaced" if rec_id in flagged else "-"
            lines.append(f"{rec_id}\textracted\t{detail}")
        for rec_id in self.skipped:
            lines.append(f"{rec_id}\tskipped\t-")
        for rec_id, detail in self.failed:
            lines.append(f"{rec_id}\tfailed\t{detail}")
        return "\n".join(lines) + "\n"


def extract_corpus(
    manifest: DatasetManifest,
    config: OcrConfig,
    output_dir: Path | str,
) -> tuple[DatasetManifest, ExtractionSummary]:
    """OCR every image-only record into ``<output_dir>/<id>.txt``.

    Records that already carry text, or whose output file already exists,
    are skipped, so reruns are cheap and idempotent.  Per-record failures
    are collected in the summary instead of aborting the pass.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    summary = ExtractionSummary()
    updated: list[PageRecord] = []
    for record in manifest.records:
        if record.text_path is not None or record.image_path is None:
            summary.skipped.append(record.id)
            updated.append(record)
            continue
        target = output_dir / f"{record.id}.txt"
        if target.exists():
            summary.skipped.append(record.id)
            updated.append(
                PageRecord(record.id, record.label, record.split, record.image_path, target)
            )
            continue
        try:
            text, replaced = _extract_text_detailed(record, config)
        except (OcrError, ValueError, OSError) as exc:
            summary.failed.append((record.id, str(exc)))
            updated.append(record)
            continue
        if replaced:
            summary.replaced.append(record.id)
        target.write_text(text, encoding="utf-8")
        summary.extracted.append(record.id)
        updated.append(
            PageRecord(record.id, record.label, record.split, record.image_path, target)
        )
    return DatasetManifest(manifest.label_set, tuple(updated)), summary
