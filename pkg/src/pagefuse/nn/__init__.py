"""Minimal dense/conv network core with explicit backpropagation.

Tensors are plain float64 numpy arrays (the shape plus row-major flat data);
batches carry a leading batch dimension over the spec's input shape.
"""

from .backend import active_backend, available_backends
from .model_io import ModelFormatError, load_model, save_model
from .network import ModelArtifact, Network, build_network
from .schedule import (
    IMAGE_MAX_RATE,
    MIN_RATE,
    TEXT_MAX_RATE,
    CosineBatchSchedule,
    image_schedule,
    schedule_rate,
    text_schedule,
)
from .specs import (
    BatchNormSpec,
    Conv2DSpec,
    DenseSpec,
    FlattenSpec,
    LayerSpec,
    MaxPool2DSpec,
    NetworkSpec,
    ReLUSpec,
    ShapeError,
    SoftmaxSpec,
    infer_shapes,
    parameter_count,
)
from .train import TrainConfig, batches_per_epoch, make_batches, sgd_fit, sgd_train

__all__ = [
    "active_backend",
    "available_backends",
    "ModelFormatError",
    "load_model",
    "save_model",
    "ModelArtifact",
    "Network",
    "build_network",
    "CosineBatchSchedule",
    "schedule_rate",
    "image_schedule",
    "text_schedule",
    "IMAGE_MAX_RATE",
    "TEXT_MAX_RATE",
    "MIN_RATE",
    "BatchNormSpec",
    "Conv2DSpec",
    "DenseSpec",
    "FlattenSpec",
    "LayerSpec",
    "MaxPool2DSpec",
    "NetworkSpec",
    "ReLUSpec",
    "ShapeError",
    "SoftmaxSpec",
    "infer_shapes",
    "parameter_count",
    "TrainConfig",
    "batches_per_epoch",
    "make_batches",
    "sgd_fit",
    "sgd_train",
]
