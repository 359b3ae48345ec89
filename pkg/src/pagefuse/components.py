"""Adapters that present trained modality models as fusion components.

Each adapter knows how to score a manifest record with an artifact and how
to retrain the same model configuration on a sub-manifest (used for
out-of-fold meta-training).  Retraining reuses the training options recorded
in the artifact metadata; fold seeds derive from the recorded seed so fold
models are reproducible.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .core import DatasetManifest, Split, filter_split
from .fusion import FusionComponent
from .images import (
    AugmentationPolicy,
    CnnPreset,
    predict_image_record,
    train_image_model,
)
from .nn import (
    CosineBatchSchedule,
    ModelArtifact,
    TrainConfig,
    batches_per_epoch,
)
from .text import ModalityError, predict_text_record, train_text_model

__all__ = ["component_from_artifact", "components_from_artifacts"]


def _train_config_from_metadata(meta: dict, n_train: int, seed: int) -> TrainConfig:
    train = meta["train"]
    batch_size = min(int(train["batch_size"]), n_train)
    return TrainConfig(
        epochs=int(train["epochs"]),
        batch_size=batch_size,
        schedule=CosineBatchSchedule(
            float(train["max_rate"]),
            float(train["min_rate"]),
            batches_per_epoch(n_train, batch_size),
        ),
        seed=seed,
    )


def _text_retrain(artifact: ModelArtifact):
    meta = artifact.metadata

    def retrain(manifest: DatasetManifest, fold: int) -> ModelArtifact:
        n_train = len(filter_split(manifest, Split.TRAIN).records)
        seed = int(meta["train"]["seed"]) * 1000 + fold + 1
        config = _train_config_from_metadata(meta, n_train, seed)
        return train_text_model(
            manifest,
            vocab_size=int(meta["requested_vocab_size"]),
            config=config,
            hidden=int(meta["hidden"]),
        )

    return retrain


def _image_retrain(artifact: ModelArtifact):
    meta = artifact.metadata

    def retrain(manifest: DatasetManifest, fold: int) -> ModelArtifact:
        n_train = len(filter_split(manifest, Split.TRAIN).records)
        seed = int(meta["train"]["seed"]) * 1000 + fold + 1
        config = _train_config_from_metadata(meta, n_train, seed)
        aug = meta["augmentation"]
        policy = AugmentationPolicy(
            shear_deg=float(aug["shear_deg"]),
            rotation_deg=float(aug["rotation_deg"]),
            salt_pepper_fraction=float(aug["salt_pepper_fraction"]),
            seed=int(aug["seed"]) * 1000 + fold + 1,
        )
        widths = meta.get("conv_widths")
        return train_image_model(
            manifest,
            preset=CnnPreset.parse(meta["preset"]),
            policy=policy,
            config=config,
            side=int(meta["side"]),
            conv_widths=widths,
        )

    return retrain


def component_from_artifact(name: str, artifact: ModelArtifact) -> FusionComponent:
    if artifact.modality == "text":
        return FusionComponent(
            name=name,
            artifact=artifact,
            score=predict_text_record,
            retrain=_text_retrain(artifact),
        )
    if artifact.modality == "image":
        return FusionComponent(
            name=name,
            artifact=artifact,
            score=predict_image_record,
            retrain=_image_retrain(artifact),
        )
    raise ModalityError(f"artifact has unknown modality {artifact.modality!r}")


def components_from_artifacts(
    artifacts: Sequence[ModelArtifact], names: Optional[Sequence[str]] = None
) -> list[FusionComponent]:
    """Name components by modality with a stable numeric suffix on repeats."""
    if names is not None:
        if len(names) != len(artifacts):
            raise ValueError("one name per artifact required")
        return [component_from_artifact(n, a) for n, a in zip(names, artifacts)]
    counts: dict[str, int] = {}
    out = []
    for artifact in artifacts:
        base = artifact.modality
        counts[base] = counts.get(base, 0) + 1
        suffix = "" if counts[base] == 1 else str(counts[base])
        out.append(component_from_artifact(base + suffix, artifact))
    return out
