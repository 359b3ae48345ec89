"""Command-line pipeline runner.

Subcommands mirror the pipeline stages:

    pagefuse extract  --config run.json            OCR image-only records
    pagefuse train    --config run.json --modality text|image [--bow-sizes ...]
    pagefuse fuse     --config run.json --components A.pgfm B.pgfm ...
    pagefuse evaluate --config run.json --artifact PATH [--components ...] --split test
    pagefuse audit    --config run.json --method text|image

A run is driven by one JSON config file (see configs/example.json); the
``--seed`` and ``--manifest`` flags override the corresponding fields.  Each
command validates the whole config and manifest before touching the output
directory.  Exit codes: 0 success, 2 config or validation failure, 3 partial
extraction failure, 4 cross-split contamination detected, 1 unexpected error.

Every trained model appends one line to ``run_log.tsv`` in the output
directory: the config hash, the seed, the model name, and its validation
accuracy.  Lines carry no timestamps so reruns are byte-reproducible.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from . import audit as audit_mod
from . import fusion as fusion_mod
from .components import components_from_artifacts
from .core import DatasetManifest, ManifestError, Split, filter_split, load_manifest, save_manifest
from .images import (
    AugmentationPolicy,
    CnnPreset,
    predict_image_record,
    train_image_model,
)
from .ingest import OcrConfig, extract_corpus
from .nn import (
    CosineBatchSchedule,
    IMAGE_MAX_RATE,
    MIN_RATE,
    TEXT_MAX_RATE,
    ModelArtifact,
    ModelFormatError,
    TrainConfig,
    batches_per_epoch,
    load_model,
    save_model,
)
from .text import ModalityError, predict_text_record, train_text_model

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_PARTIAL_EXTRACTION = 3
EXIT_CONTAMINATION = 4


class ConfigError(ValueError):
    """Bad run configuration."""


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    output_dir: Path
    seed: int = 0
    text: dict[str, Any] = field(default_factory=dict)
    image: dict[str, Any] = field(default_factory=dict)
    fusion: dict[str, Any] = field(default_factory=dict)
    ocr: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path, seed: Optional[int], manifest: Optional[Path]) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        known = {"manifest", "output_dir", "seed", "text", "image", "fusion", "ocr"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for section in ("text", "image", "fusion", "ocr"):
            if section in raw and not isinstance(raw[section], dict):
                raise ConfigError(f"config section {section!r} must be an object")
        try:
            manifest_path = Path(manifest or raw["manifest"])
            output_dir = Path(raw["output_dir"])
        except KeyError as exc:
            raise ConfigError(f"config is missing required field {exc}") from exc
        if not manifest_path.is_absolute():
            manifest_path = Path(path).parent / manifest_path
        if not output_dir.is_absolute():
            output_dir = Path(path).parent / output_dir
        run_seed = seed if seed is not None else int(raw.get("seed", 0))
        return cls(
            manifest=manifest_path,
            output_dir=output_dir,
            seed=run_seed,
            text=dict(raw.get("text", {})),
            image=dict(raw.get("image", {})),
            fusion=dict(raw.get("fusion", {})),
            ocr=dict(raw.get("ocr", {})),
        )

    def config_hash(self) -> str:
        blob = json.dumps(
            {
                "seed": self.seed,
                "text": self.text,
                "image": self.image,
                "fusion": self.fusion,
                "ocr": self.ocr,
            },
            sort_keys=True,
        ).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def load_manifest(self) -> DatasetManifest:
        try:
            return load_manifest(self.manifest)
        except ManifestError as exc:
            raise ConfigError(str(exc)) from exc


def _train_config(options: dict, n_train: int, seed: int, default_max_rate: float) -> TrainConfig:
    epochs = int(options.get("epochs", 5))
    batch_size = int(options.get("batch_size", 32))
    if batch_size > n_train:
        raise ConfigError(f"batch_size {batch_size} exceeds training split size {n_train}")
    schedule = CosineBatchSchedule(
        float(options.get("max_rate", default_max_rate)),
        float(options.get("min_rate", MIN_RATE)),
        batches_per_epoch(n_train, batch_size),
    )
    return TrainConfig(epochs=epochs, batch_size=batch_size, schedule=schedule, seed=seed)


def _fusion_config(options: dict) -> fusion_mod.FusionConfig:
    return fusion_mod.FusionConfig(
        max_depth=int(options.get("max_depth", 3)),
        rounds=int(options.get("rounds", 100)),
        shrinkage=float(options.get("shrinkage", 0.1)),
        min_samples_leaf=int(options.get("min_samples_leaf", 1)),
        component_order=tuple(options.get("component_order", ())),
        oof_folds=int(options.get("oof_folds", 5)),
        meta_source=str(options.get("meta_source", "oof-train")),
    )


def _ocr_config(options: dict) -> OcrConfig:
    kwargs = {}
    if "command_template" in options:
        kwargs["command_template"] = str(options["command_template"])
    if "longest_side_px" in options:
        kwargs["longest_side_px"] = int(options["longest_side_px"])
    if "engine_args" in options:
        kwargs["engine_args"] = str(options["engine_args"])
    return OcrConfig(**kwargs)


def _append_run_log(config: RunConfig, name: str, val_accuracy: float) -> None:
    log = config.output_dir / "run_log.tsv"
    line = f"{config.config_hash()}\t{config.seed}\t{name}\t{val_accuracy!r}\n"
    with open(log, "a", encoding="utf-8") as fh:
        fh.write(line)


def _scorer_for(artifact: ModelArtifact):
    if artifact.modality == "text":
        return lambda record: predict_text_record(artifact, record)
    if artifact.modality == "image":
        return lambda record: predict_image_record(artifact, record)
    raise ModalityError(f"unknown artifact modality {artifact.modality!r}")


def _validation_accuracy(artifact: ModelArtifact, manifest: DatasetManifest) -> float:
    report = fusion_mod.evaluate(_scorer_for(artifact), manifest, Split.VALIDATION)
    return report.accuracy


# -- subcommands --------------------------------------------------------------


def cmd_extract(config: RunConfig) -> int:
    manifest = config.load_manifest()
    ocr = _ocr_config(config.ocr)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    text_dir = config.output_dir / "texts"
    updated, summary = extract_corpus(manifest, ocr, text_dir)
    save_manifest(updated, config.output_dir / "manifest_extracted.tsv")
    (config.output_dir / "extract_summary.tsv").write_text(summary.to_tsv(), encoding="utf-8")
    print(
        f"extracted {len(summary.extracted)}, skipped {len(summary.skipped)}, "
        f"failed {len(summary.failed)}"
    )
    for rec_id, detail in summary.failed:
        print(f"  failed {rec_id}: {detail}", file=sys.stderr)
    return EXIT_OK if summary.ok else EXIT_PARTIAL_EXTRACTION


def _train_one_text(config: RunConfig, manifest: DatasetManifest, vocab_size: int) -> Path:
    n_train = len(filter_split(manifest, Split.TRAIN).records)
    if n_train == 0:
        raise ConfigError("training split is empty")
    train_cfg = _train_config(config.text, n_train, config.seed, TEXT_MAX_RATE)
    hidden = int(config.text.get("hidden", 256))
    artifact = train_text_model(manifest, vocab_size, train_cfg, hidden=hidden)
    path = config.output_dir / f"text_bow{vocab_size}.pgfm"
    save_model(artifact, path)
    from .text import artifact_vocabulary

    artifact_vocabulary(artifact).save(path.with_suffix(".vocab.txt"))
    _append_run_log(config, path.stem, _validation_accuracy(artifact, manifest))
    print(f"trained {path.name}")
    return path

def _train_one_image(config: RunConfig, manifest: DatasetManifest) -> Path:
    n_train = len(filter_split(manifest, Split.TRAIN).records)
    if n_train == 0:
        raise ConfigError("training split is empty")
    train_cfg = _train_config(config.image, n_train, config.seed, IMAGE_MAX_RATE)
    preset = CnnPreset.parse(str(config.image.get("preset", "mini_alexnet_bn")))
    side = int(config.image.get("side", 227))
    aug = dict(config.image.get("augment", {}))
    policy = AugmentationPolicy(
        shear_deg=float(aug.get("shear_deg", 10.0)),
        rotation_deg=float(aug.get("rotation_deg", 5.0)),
        salt_pepper_fraction=float(aug.get("salt_pepper_fraction", 0.0)),
        seed=int(aug.get("seed", config.seed)),
    )
    widths = config.image.get("conv_widths")
    artifact = train_image_model(
        manifest, preset, policy, train_cfg, side=side,
        conv_widths=tuple(widths) if widths else None,
    )
    path = config.output_dir / f"image_{preset.value}.pgfm"
    save_model(artifact, path)
    _append_run_log(config, path.stem, _validation_accuracy(artifact, manifest))
    print(f"trained {path.name}")
    return path


def cmd_train(config: RunConfig, modality: str, bow_sizes: Optional[list[int]]) -> int:
    manifest = config.load_manifest()
    config.output_dir.mkdir(parents=True, exist_ok=True)
    if modality == "text":
        sizes = bow_sizes or [int(config.text.get("vocab_size", 1000))]
        for vocab_size in sizes:
            _train_one_text(config, manifest, vocab_size)
    elif modality == "image":
        if bow_sizes:
            raise ConfigError("--bow-sizes applies to the text modality only")
        _train_one_image(config, manifest)
    else:
        raise ConfigError(f"unknown modality {modality!r}")
    return EXIT_OK


def _load_artifacts(paths: Sequence[Path]) -> list[ModelArtifact]:
    artifacts = []
    for path in paths:
        try:
            artifacts.append(load_model(path))
        except (ModelFormatError, OSError) as exc:
            raise ConfigError(f"cannot load component {path}: {exc}") from exc
    return artifacts


def cmd_fuse(config: RunConfig, component_paths: list[Path], allow_single: bool) -> int:
    manifest = config.load_manifest()
    if len(component_paths) < 2 and not allow_single:
        raise ConfigError(
            "fusion needs at least two component artifacts "
            "(pass --allow-single to override)"
        )
    if not component_paths:
        raise ConfigError("fusion needs at least one component artifact")
    config.output_dir.mkdir(parents=True, exist_ok=True)
    artifacts = _load_artifacts(component_paths)
    components = components_from_artifacts(artifacts)
    fusion_cfg = _fusion_config(config.fusion)
    if not fusion_cfg.component_order:
        from dataclasses import replace

        fusion_cfg = replace(fusion_cfg, component_order=tuple(c.name for c in components))
    forest = fusion_mod.train_meta(components, manifest, fusion_cfg)
    forest_path = config.output_dir / "fused_forest.txt"
    fusion_mod.save_forest(forest, forest_path)

    scorer = fusion_mod.fused_scorer(forest, components)
    rows = []
    for component in components:
        rows.append(
            (
                component.name,
                fusion_mod.evaluate(component.score_record, manifest, Split.VALIDATION).accuracy,
                fusion_mod.evaluate(component.score_record, manifest, Split.TEST).accuracy,
            )
        )
    fused_val = fusion_mod.evaluate(scorer, manifest, Split.VALIDATION).accuracy
    fused_test = fusion_mod.evaluate(scorer, manifest, Split.TEST).accuracy
    rows.append(("fused(" + "+".join(c.name for c in components) + ")", fused_val, fused_test))

    lines_h = ["model            validation  test"]
    lines_t = ["model\tvalidation_accuracy\ttest_accuracy"]
    for name, val, test in rows:
        lines_h.append(f"{name:<16} {val:>10.4f}  {test:.4f}")
        lines_t.append(f"{name}\t{val!r}\t{test!r}")
    report_text = "\n".join(lines_h) + "\n"
    (config.output_dir / "fusion_report.txt").write_text(report_text, encoding="utf-8")
    (config.output_dir / "fusion_report.tsv").write_text("\n".join(lines_t) + "\n", encoding="utf-8")
    print(report_text, end="")
    _append_run_log(config, "fused", fused_val)
    return EXIT_OK


def cmd_evaluate(
    config: RunConfig,
    artifact_path: Path,
    component_paths: list[Path],
    split: Split,
) -> int:
    manifest = config.load_manifest()
    config.output_dir.mkdir(parents=True, exist_ok=True)
    try:
        artifact = load_model(artifact_path)
        scorer = _scorer_for(artifact)
        name = Path(artifact_path).stem
    except ModelFormatError:
        # not a network artifact; try the forest format
        forest = fusion_mod.load_forest(artifact_path)
        if not component_paths:
            raise ConfigError("evaluating a forest requires --components")
        components = components_from_artifacts(_load_artifacts(component_paths))
        if tuple(c.name for c in components) != forest.component_order:
            raise ConfigError(
                f"component order {tuple(c.name for c in components)} does not match "
                f"forest ({forest.component_order})"
            )
        scorer = fusion_mod.fused_scorer(forest, components)
        name = "fused"
    report = fusion_mod.evaluate(scorer, manifest, split)
    # validation/test summary columns next to the detailed split report
    summary_rows = []
    for extra in (Split.VALIDATION, Split.TEST):
        if extra is split:
            summary_rows.append((extra, report.accuracy))
        elif filter_split(manifest, extra).records:
            summary_rows.append((extra, fusion_mod.evaluate(scorer, manifest, extra).accuracy))
    text = report.to_text()
    tsv = report.to_tsv()
    for extra, accuracy in summary_rows:
        text += f"{extra.value} accuracy: {accuracy:.4f}\n"
        tsv += f"split_accuracy\t{extra.value}\t{accuracy!r}\n"
    stem = f"eval_{name}_{split.value}"
    (config.output_dir / f"{stem}.txt").write_text(text, encoding="utf-8")
    (config.output_dir / f"{stem}.tsv").write_text(tsv, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_audit(config: RunConfig, method: str) -> int:
    manifest = config.load_manifest()
    config.output_dir.mkdir(parents=True, exist_ok=True)
    if method == "text":
        report = audit_mod.find_text_duplicates(manifest)
    elif method == "image":
        report = audit_mod.find_image_duplicates(manifest)
    else:
        raise ConfigError(f"unknown audit method {method!r}")
    contaminated = audit_mod.cross_split_contamination(report)
    table = report.to_table_text(manifest.label_set.num_classes)
    if contaminated:
        table += (
            f"cross-split contamination: {len(contaminated)} group(s), "
            f"{sum(g.size for g in contaminated)} instances\n"
        )
    (config.output_dir / f"audit_{method}.txt").write_text(table, encoding="utf-8")
    (config.output_dir / f"audit_{method}.tsv").write_text(report.to_tsv(), encoding="utf-8")
    print(table, end="")
    return EXIT_CONTAMINATION if contaminated else EXIT_OK


# -- argument parsing ----------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pagefuse",
        description="multimodal document page classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--manifest", type=Path, default=None, help="override config manifest")

    common(sub.add_parser("extract", help="OCR image-only records into text files"))

    p_train = sub.add_parser("train", help="train a component model")
    common(p_train)
    p_train.add_argument("--modality", choices=("text", "image"), required=True)
    p_train.add_argument(
        "--bow-sizes",
        type=lambda s: [int(x) for x in s.split(",") if x],
        default=None,
        help="comma-separated vocabulary sizes for a text sweep",
    )

    p_fuse = sub.add_parser("fuse", help="train the late-fusion meta-classifier")
    common(p_fuse)
    p_fuse.add_argument("--components", type=Path, nargs="+", required=True)
    p_fuse.add_argument("--allow-single", action="store_true")

    p_eval = sub.add_parser("evaluate", help="evaluate an artifact on a split")
    common(p_eval)
    p_eval.add_argument("--artifact", type=Path, required=True)
    p_eval.add_argument("--components", type=Path, nargs="*", default=[])
    p_eval.add_argument("--split", choices=[s.value for s in Split], default="test")

    p_audit = sub.add_parser("audit", help="find duplicate pages across splits/classes")
    common(p_audit)
    p_audit.add_argument("--method", choices=("text", "image"), default="text")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = RunConfig.load(args.config, args.seed, args.manifest)
        if args.command == "extract":
            return cmd_extract(config)
        if args.command == "train":
            return cmd_train(config, args.modality, args.bow_sizes)
        if args.command == "fuse":
            return cmd_fuse(config, list(args.components), args.allow_single)
        if args.command == "evaluate":
            return cmd_evaluate(
                config, args.artifact, list(args.components), Split(args.split)
            )
        if args.command == "audit":
            return cmd_audit(config, args.method)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, ManifestError, ModalityError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - defensive
        print(f"unexpected error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
