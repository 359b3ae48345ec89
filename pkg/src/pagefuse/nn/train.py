"""Plain SGD under the per-epoch cosine restart schedule.

Each epoch visits the fixed set of batches in a freshly shuffled order; the
batch at visit position k steps with rate(k), so every epoch starts back at
the peak rate.  The update is parameters -= rate * gradient with no momentum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .network import ModelArtifact, Network
from .schedule import CosineBatchSchedule, schedule_rate

__all__ = ["TrainConfig", "sgd_fit", "sgd_train", "Batch"]

Batch = tuple[np.ndarray, np.ndarray]
BatchSource = Sequence[Batch] | Callable[[int], Sequence[Batch]]
OnBatch = Callable[[int, int, float, float], None]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    schedule: CosineBatchSchedule
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def sgd_fit(model, data: BatchSource, config: TrainConfig, on_batch: Optional[OnBatch] = None):
    """Train any model exposing param_vector/set_param_vector/loss_and_gradient.

    ``data`` is either a fixed batch list or a callable epoch -> batch list
    (used by the image pipeline to re-augment each epoch).  The number of
    batches must equal the schedule's batches_per_epoch.
    """
    n = config.schedule.batches_per_epoch
    for epoch in range(config.epochs):
        batches = data(epoch) if callable(data) else data
        if len(batches) == 0:
            raise ValueError("empty dataset")
        if len(batches) != n:
            raise ValueError(
                f"epoch {epoch} delivered {len(batches)} batches, schedule expects {n}"
            )
        order = _epoch_order(config.seed, epoch, n)
        for position, batch_index in enumerate(order):
            rate = schedule_rate(config.schedule, position)
            inputs, labels = batches[batch_index]
            loss, grad = model.loss_and_gradient(inputs, labels)
            model.set_param_vector(model.param_vector() - rate * grad)
            if on_batch is not None:
                on_batch(epoch, position, rate, loss)
    return model


def sgd_train(
    network: Network,
    data: BatchSource,
    config: TrainConfig,
    metadata: Optional[dict[str, Any]] = None,
    on_batch: Optional[OnBatch] = None,
) -> ModelArtifact:
    """Train a network and package the result."""
    sgd_fit(network, data, config, on_batch)
    return network.to_artifact(metadata)


def make_batches(inputs: np.ndarray, labels: np.ndarray, batch_size: int) -> list[Batch]:
    """Slice arrays into ceil(n / batch_size) batches preserving order."""
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    return [
        (inputs[i : i + batch_size], labels[i : i + batch_size])
        for i in range(0, n, batch_size)
    ]


def batches_per_epoch(n_records: int, batch_size: int) -> int:
    return (n_records + batch_size - 1) // batch_size
