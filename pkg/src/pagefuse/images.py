"""Image loading, preprocessing, train-time augmentation, and CNN presets.

Pages enter as 8-bit grayscale or RGB rasters (PNG is the reference format;
anything Pillow decodes is accepted).  Model input is a square bilinear
resize, grayscale replicated to three channels, intensities mapped to
[-1, 1].  Augmentation composes a shear and a rotation into one affine
resample about the image center with white fill, optionally followed by
salt-and-pepper noise; it runs on training images only, with fresh draws
every epoch.

The two CNN presets keep the structural signature of the classic stacks
(batch-norm placement, block pattern, square input, class-count softmax)
at a small fraction of the channel widths so desk-scale training finishes
in minutes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import ClassScores, DatasetManifest, PageRecord, Split, filter_split
from .nn import (
    BatchNormSpec,
    Conv2DSpec,
    DenseSpec,
    FlattenSpec,
    LayerSpec,
    MaxPool2DSpec,
    ModelArtifact,
    NetworkSpec,
    ReLUSpec,
    SoftmaxSpec,
    TrainConfig,
    build_network,
    infer_shapes,
    sgd_train,
)
from .text import ModalityError

__all__ = [
    "PageImage",
    "ImageDecodeError",
    "AugmentationPolicy",
    "CnnPreset",
    "decode_image",
    "encode_png",
    "resize_image",
    "preprocess_page",
    "load_and_preprocess",
    "sample_affine_params",
    "augment",
    "expand_preset",
    "train_image_model",
    "predict_image",
    "DEFAULT_SIDE",
]

DEFAULT_SIDE = 227

WHITE = 255


class ImageDecodeError(ValueError):
    """File is not a decodable raster image."""


@dataclass(frozen=True)
class PageImage:
    """8-bit pixels shaped [height, width, channels], channels 1 or 3."""

    pixels: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        p = np.asarray(self.pixels)
        if p.ndim == 2:
            p = p[:, :, None]
        if p.ndim != 3 or p.shape[2] not in (1, 3):
            raise ValueError("pixels must be [h, w, 1] or [h, w, 3]")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("image has a zero dimension")
        p = np.ascontiguousarray(p, dtype=np.uint8)
        p.flags.writeable = False
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def decode_image(path: Path | str) -> PageImage:
    try:
        with Image.open(path) as img:
            if img.mode == "L":
                arr = np.asarray(img)
            elif img.mode in ("1", "I", "I;16", "F", "LA", "P"):
                arr = np.asarray(img.convert("L"))
            else:
                arr = np.asarray(img.convert("RGB"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc
    return PageImage(arr)


def encode_png(image: PageImage, path: Path | str) -> None:
    arr = image.pixels[:, :, 0] if image.channels == 1 else image.pixels
    Image.fromarray(arr).save(path, format="PNG")


def _sample_bilinear(pixels: np.ndarray, src_y: np.ndarray, src_x: np.ndarray,
                     fill: float | None = None) -> np.ndarray:
    """Bilinear gather at fractional coordinates; out-of-bounds uses fill
    (or clamps when fill is None)."""
    h, w = pixels.shape[:2]
    if fill is None:
        sy = np.clip(src_y, 0.0, h - 1.0)
        sx = np.clip(src_x, 0.0, w - 1.0)
    else:
        sy, sx = src_y, src_x
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = (sy - y0)[..., None]
    fx = (sx - x0)[..., None]

    def grab(yy, xx):
        if fill is None:
            yy = np.clip(yy, 0, h - 1)
            xx = np.clip(xx, 0, w - 1)
            return pixels[yy, xx].astype(np.float64)
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        out = np.full(yy.shape + (pixels.shape[2],), float(fill))
        out[inside] = pixels[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)][inside]
        return out

    top = grab(y0, x0) * (1 - fx) + grab(y0, x0 + 1) * fx
    bottom = grab(y0 + 1, x0) * (1 - fx) + grab(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bottom * fy


def resize_image(image: PageImage, out_h: int, out_w: int) -> PageImage:
    """Bilinear resize; an identity-size request returns the input pixels."""
    if out_h < 1 or out_w < 1:
        raise ValueError("target dimensions must be positive")
    if (out_h, out_w) == (image.height, image.width):
        return image
    scale_y = image.height / out_h
    scale_x = image.width / out_w
    yy = (np.arange(out_h) + 0.5) * scale_y - 0.5
    xx = (np.arange(out_w) + 0.5) * scale_x - 0.5
    src_y, src_x = np.meshgrid(yy, xx, indexing="ij")
    out = _sample_bilinear(image.pixels, src_y, src_x, fill=None)
    return PageImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def preprocess_page(image: PageImage, side: int = DEFAULT_SIDE) -> np.ndarray:
    """[3, side, side] float64 in [-1, 1]; grayscale replicated to RGB."""
    resized = resize_image(image, side, side)
    arr = resized.pixels.astype(np.float64)
    if resized.channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    arr = arr / 127.5 - 1.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_and_preprocess(path: Path | str, side: int = DEFAULT_SIDE) -> np.ndarray:
    return preprocess_page(decode_image(path), side)


# -- augmentation ----------------------------------------------------------


@dataclass(frozen=True)
class AugmentationPolicy:
    """Symmetric draw ranges; angles in degrees, fraction of pixels noised."""

    shear_deg: float = 10.0
    rotation_deg: float = 5.0
    salt_pepper_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.shear_deg < 0 or self.rotation_deg < 0:
            raise ValueError("angle ranges are half-widths and must be >= 0")
        if not 0.0 <= self.salt_pepper_fraction <= 1.0:
            raise ValueError("salt_pepper_fraction must lie in [0, 1]")

    @classmethod
    def disabled(cls, seed: int = 0) -> "AugmentationPolicy":
        return cls(shear_deg=0.0, rotation_deg=0.0, salt_pepper_fraction=0.0, seed=seed)


def sample_affine_params(policy: AugmentationPolicy, rng: np.random.Generator) -> tuple[float, float]:
    """Uniform (shear, rotation) draw in degrees from the policy ranges."""
    shear = float(rng.uniform(-policy.shear_deg, policy.shear_deg)) if policy.shear_deg else 0.0
    rot = float(rng.uniform(-policy.rotation_deg, policy.rotation_deg)) if policy.rotation_deg else 0.0
    return shear, rot


def augment(image: PageImage, policy: AugmentationPolicy, rng: np.random.Generator) -> PageImage:
    """Shear-then-rotate about the center in one bilinear resample with white
    fill, then independent per-pixel salt-and-pepper flips."""
    shear_deg, rot_deg = sample_affine_params(policy, rng)
    if shear_deg == 0.0 and rot_deg == 0.0:
        out = image.pixels
    else:
        shear = np.tan(np.deg2rad(shear_deg))
        theta = np.deg2rad(rot_deg)
        rotate = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        shear_m = np.array([[1.0, shear], [0.0, 1.0]])
        forward = rotate @ shear_m  # shear applied first, then rotation
        inverse = np.linalg.inv(forward)
        h, w = image.height, image.width
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                             indexing="ij")
        rel = np.stack([yy - cy, xx - cx])
        src_y = inverse[0, 0] * rel[0] + inverse[0, 1] * rel[1] + cy
        src_x = inverse[1, 0] * rel[0] + inverse[1, 1] * rel[1] + cx
        sampled = _sample_bilinear(image.pixels, src_y, src_x, fill=WHITE)
        out = np.clip(np.rint(sampled), 0, 255).astype(np.uint8)

    fraction = policy.salt_pepper_fraction
    if fraction > 0.0:
        out = out.copy()
        u = rng.random((image.height, image.width))
        out[u < fraction / 2.0] = 0
        out[(u >= fraction / 2.0) & (u < fraction)] = WHITE
    return PageImage(out)


# -- CNN presets -----------------------------------------------------------


class CnnPreset(enum.Enum):
    MINI_ALEXNET_BN = "mini_alexnet_bn"
    MINI_VGG = "mini_vgg"

    @classmethod
    def parse(cls, name: str) -> "CnnPreset":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown preset {name!r}") from None


ALEXNET_CONV_WIDTHS = (16, 32, 64)
VGG_CONV_WIDTHS = (8, 16, 32, 64)
DENSE_WIDTHS = (128, 64)


def _dense_head(flat_dim: int, num_classes: int,
                widths: Sequence[int] = DENSE_WIDTHS) -> list[LayerSpec]:
    layers: list[LayerSpec] = []
    prev = flat_dim
    for width in widths:
        layers += [DenseSpec(prev, width), ReLUSpec()]
        prev = width
    layers += [DenseSpec(prev, num_classes), SoftmaxSpec()]
    return layers


def expand_preset(
    preset: CnnPreset,
    side: int,
    num_classes: int,
    seed: int = 0,
    conv_widths: Optional[Sequence[int]] = None,
) -> NetworkSpec:
    """Concrete shape-checked network spec for a preset at a given input side."""
    layers: list[LayerSpec] = []
    if preset is CnnPreset.MINI_ALEXNET_BN:
        widths = tuple(conv_widths or ALEXNET_CONV_WIDTHS)
        in_ch = 3
        for i, out_ch in enumerate(widths):
            kernel, stride, padding = (5, 2, 2) if i == 0 else (3, 1, 1)
            layers += [
                Conv2DSpec(in_ch, out_ch, kernel, stride, padding),
                BatchNormSpec(out_ch),
                ReLUSpec(),
                MaxPool2DSpec(window=3, stride=2),
            ]
            in_ch = out_ch
    elif preset is CnnPreset.MINI_VGG:
        widths = tuple(conv_widths or VGG_CONV_WIDTHS)
        in_ch = 3
        for out_ch in widths:
            layers += [
                Conv2DSpec(in_ch, out_ch, 3, 1, 1),
                ReLUSpec(),
                Conv2DSpec(out_ch, out_ch, 3, 1, 1),
                ReLUSpec(),
                MaxPool2DSpec(window=2, stride=2),
            ]
            in_ch = out_ch
    else:
        raise ValueError(f"unknown preset {preset!r}")

    body = NetworkSpec(input_shape=(3, side, side), layers=tuple(layers), seed=seed)
    final_shape = infer_shapes(body)[-1]  # raises ShapeError when side is too small
    flat = int(np.prod(final_shape))
    layers += [FlattenSpec(), *_dense_head(flat, num_classes)]
    return NetworkSpec(input_shape=(3, side, side), layers=tuple(layers), seed=seed)


# -- training and prediction ------------------------------------------------


def _load_train_images(records) -> list[PageImage]:
    images = []
    for rec in records:
        if rec.image_path is None:
            raise FileNotFoundError(f"record {rec.id!r} has no image path")
        images.append(decode_image(rec.image_path))
    return images


def train_image_model(
    manifest: DatasetManifest,
    preset: CnnPreset,
    policy: AugmentationPolicy,
    config: TrainConfig,
    side: int = DEFAULT_SIDE,
    conv_widths: Optional[Sequence[int]] = None,
) -> ModelArtifact:
    """Fit a CNN preset; every epoch re-augments each training image.

    Record order is shuffled once from the config seed and then fixed, so
    the batch composition is stable while the SGD loop shuffles the visit
    order per epoch.  Augmentation draws derive from the policy seed alone.
    """
    train = filter_split(manifest, Split.TRAIN)
    if not train.records:
        raise ValueError("training split is empty")
    order = np.random.default_rng([config.seed, 0]).permutation(len(train.records))
    records = [train.records[i] for i in order]
    originals = _load_train_images(records)
    labels = np.array([r.label for r in records])
    num_classes = manifest.label_set.num_classes
    batch = config.batch_size
    if batch > len(records):
        raise ValueError(f"batch_size {batch} exceeds training split size {len(records)}")

    def epoch_batches(epoch: int):
        arrays = np.empty((len(records), 3, side, side))
        for i, img in enumerate(originals):
            rng = np.random.default_rng([policy.seed, epoch, i])
            arrays[i] = preprocess_page(augment(img, policy, rng), side)
        return [
            (arrays[i : i + batch], labels[i : i + batch])
            for i in range(0, len(records), batch)
        ]

    spec = expand_preset(preset, side, num_classes, seed=config.seed, conv_widths=conv_widths)
    net = build_network(spec)
    metadata = {
        "modality": "image",
        "preset": preset.value,
        "side": side,
        "conv_widths": list(conv_widths) if conv_widths else None,
        "augmentation": {
            "shear_deg": policy.shear_deg,
            "rotation_deg": policy.rotation_deg,
            "salt_pepper_fraction": policy.salt_pepper_fraction,
            "seed": policy.seed,
        },
        "train": {
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "max_rate": config.schedule.max_rate,
            "min_rate": config.schedule.min_rate,
            "seed": config.seed,
        },
    }
    return sgd_train(net, epoch_batches, config, metadata=metadata)


def predict_image(artifact: ModelArtifact, path: Path | str) -> ClassScores:
    """Preprocess at the artifact's recorded side and run inference."""
    if artifact.modality != "image":
        raise ModalityError(f"expected an image model, got {artifact.modality!r}")
    side = int(artifact.metadata["side"])
    batch = load_and_preprocess(path, side)[None, :]
    probs = artifact.inference_network().forward(batch, training=False)
    return ClassScores(probs[0])


def predict_image_record(artifact: ModelArtifact, record: PageRecord) -> ClassScores:
    if record.image_path is None:
        raise FileNotFoundError(f"record {record.id!r} has no image path")
    return predict_image(artifact, record.image_path)
