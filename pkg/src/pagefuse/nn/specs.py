"""Declarative layer and network descriptions.

A network is a flat stack of layer specs over a fixed input shape.  Shape
compatibility is checked up front by propagating the (batch-free) shape
through the stack; errors name the offending layer pair.  Specs are plain
data and serialize to/from dicts for the model file format.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Union

__all__ = [
    "DenseSpec",
    "Conv2DSpec",
    "MaxPool2DSpec",
    "BatchNormSpec",
    "ReLUSpec",
    "FlattenSpec",
    "SoftmaxSpec",
    "LayerSpec",
    "NetworkSpec",
    "ShapeError",
    "infer_shapes",
    "parameter_count",
    "layer_spec_from_dict",
]


class ShapeError(ValueError):
    """Adjacent layers are not shape compatible."""


@dataclass(frozen=True)
class DenseSpec:
    in_dim: int
    out_dim: int
    kind: str = field(default="dense", init=False)


@dataclass(frozen=True)
class Conv2DSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    kind: str = field(default="conv2d", init=False)


@dataclass(frozen=True)
class MaxPool2DSpec:
    window: int
    stride: int
    kind: str = field(default="maxpool2d", init=False)


@dataclass(frozen=True)
class BatchNormSpec:
    num_features: int
    epsilon: float = 1e-5
    momentum: float = 0.9
    kind: str = field(default="batchnorm", init=False)


@dataclass(frozen=True)
class ReLUSpec:
    kind: str = field(default="relu", init=False)


@dataclass(frozen=True)
class FlattenSpec:
    kind: str = field(default="flatten", init=False)


@dataclass(frozen=True)
class SoftmaxSpec:
    kind: str = field(default="softmax", init=False)


LayerSpec = Union[
    DenseSpec,
    Conv2DSpec,
    MaxPool2DSpec,
    BatchNormSpec,
    ReLUSpec,
    FlattenSpec,
    SoftmaxSpec,
]

_KINDS = {
    "dense": DenseSpec,
    "conv2d": Conv2DSpec,
    "maxpool2d": MaxPool2DSpec,
    "batchnorm": BatchNormSpec,
    "relu": ReLUSpec,
    "flatten": FlattenSpec,
    "softmax": SoftmaxSpec,
}


def layer_spec_to_dict(spec: LayerSpec) -> dict:
    return asdict(spec)


def layer_spec_from_dict(data: dict) -> LayerSpec:
    data = dict(data)
    kind = data.pop("kind")
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    return cls(**data)


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if any(d <= 0 for d in self.input_shape):
            raise ValueError("input shape dimensions must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [layer_spec_to_dict(l) for l in self.layers],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        return cls(
            input_shape=tuple(data["input_shape"]),
            layers=tuple(layer_spec_from_dict(l) for l in data["layers"]),
            seed=int(data.get("seed", 0)),
        )


def _conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _propagate(spec: LayerSpec, shape: tuple[int, ...], position: int) -> tuple[int, ...]:
    def fail(reason: str) -> ShapeError:
        return ShapeError(
            f"layer {position} ({spec.kind}) incompatible with input shape {shape}: {reason}"
        )

    if isinstance(spec, DenseSpec):
        if len(shape) != 1:
            raise fail("dense needs a flat input, add a flatten layer")
        if shape[0] != spec.in_dim:
            raise fail(f"expects in_dim={spec.in_dim}")
        return (spec.out_dim,)
    if isinstance(spec, Conv2DSpec):
        if len(shape) != 3:
            raise fail("conv2d needs a [channels, height, width] input")
        if shape[0] != spec.in_channels:
            raise fail(f"expects in_channels={spec.in_channels}")
        h = _conv_out(shape[1], spec.kernel, spec.stride, spec.padding)
        w = _conv_out(shape[2], spec.kernel, spec.stride, spec.padding)
        if h < 1 or w < 1:
            raise fail(f"kernel {spec.kernel} exhausts spatial extent {shape[1]}x{shape[2]}")
        return (spec.out_channels, h, w)
    if isinstance(spec, MaxPool2DSpec):
        if len(shape) != 3:
            raise fail("maxpool2d needs a [channels, height, width] input")
        h = _conv_out(shape[1], spec.window, spec.stride, 0)
        w = _conv_out(shape[2], spec.window, spec.stride, 0)
        if h < 1 or w < 1:
            raise fail(f"window {spec.window} exhausts spatial extent {shape[1]}x{shape[2]}")
        return (shape[0], h, w)
    if isinstance(spec, BatchNormSpec):
        features = shape[0]
        if features != spec.num_features:
            raise fail(f"expects num_features={spec.num_features}")
        return shape
    if isinstance(spec, ReLUSpec):
        return shape
    if isinstance(spec, FlattenSpec):
        size = 1
        for d in shape:
            size *= d
        return (size,)
    if isinstance(spec, SoftmaxSpec):
        if len(shape) != 1:
            raise fail("softmax needs a flat input")
        return shape
    raise TypeError(f"unknown layer spec {spec!r}")


def infer_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Shapes after each layer, starting with the input shape."""
    shapes = [spec.input_shape]
    for i, layer in enumerate(spec.layers):
        shapes.append(_propagate(layer, shapes[-1], i))
    return shapes


def parameter_count(spec: NetworkSpec) -> int:
    total = 0
    for layer in spec.layers:
        if isinstance(layer, DenseSpec):
            total += layer.in_dim * layer.out_dim + layer.out_dim
        elif isinstance(layer, Conv2DSpec):
            total += layer.out_channels * layer.in_channels * layer.kernel ** 2
            total += layer.out_channels
        elif isinstance(layer, BatchNormSpec):
            total += 2 * layer.num_features
    return total
