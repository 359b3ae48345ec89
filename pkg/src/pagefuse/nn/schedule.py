"""Batch-level cosine-annealed learning rate.

Within one epoch of ``batches_per_epoch`` batches the rate decays from
``max_rate`` to ``min_rate`` along half a cosine period:

    rate(k) = 0.5 * (max - min) * (cos(k * pi / N) + 1) + min

The next epoch restarts at ``max_rate``; there is no smoothing across the
restart.  Default bounds: image models 2e-3, text models 1e-2, both with a
1e-6 floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "CosineBatchSchedule",
    "schedule_rate",
    "image_schedule",
    "text_schedule",
    "IMAGE_MAX_RATE",
    "TEXT_MAX_RATE",
    "MIN_RATE",
]

IMAGE_MAX_RATE = 0.002
TEXT_MAX_RATE = 0.01
MIN_RATE = 1e-6


@dataclass(frozen=True)
class CosineBatchSchedule:
    max_rate: float
    min_rate: float
    batches_per_epoch: int

    def __post_init__(self) -> None:
        if not (0.0 < self.min_rate <= self.max_rate):
            raise ValueError("need 0 < min_rate <= max_rate")
        if self.batches_per_epoch < 1:
            raise ValueError("batches_per_epoch must be positive")


def schedule_rate(schedule: CosineBatchSchedule, batch_index: float) -> float:
    """Learning rate for a batch index in [0, batches_per_epoch].

    The angle is computed as (k / N) * pi so that the endpoints evaluate to
    exactly max_rate and min_rate in floating point.
    """
    n = schedule.batches_per_epoch
    if not 0 <= batch_index <= n:
        raise ValueError(f"batch index {batch_index} outside [0, {n}]")
    cos_term = math.cos((batch_index / n) * math.pi)
    return 0.5 * (schedule.max_rate - schedule.min_rate) * (cos_term + 1.0) + schedule.min_rate


def image_schedule(batches_per_epoch: int) -> CosineBatchSchedule:
    return CosineBatchSchedule(IMAGE_MAX_RATE, MIN_RATE, batches_per_epoch)


def text_schedule(batches_per_epoch: int) -> CosineBatchSchedule:
    return CosineBatchSchedule(TEXT_MAX_RATE, MIN_RATE, batches_per_epoch)
