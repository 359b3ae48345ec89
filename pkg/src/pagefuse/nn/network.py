"""Network assembly, forward/backward evaluation, and trained artifacts.

``build_network`` shape-checks a spec and initializes parameters from the
spec seed: Glorot-uniform weights, zero biases, unit batch-norm scale, all
drawn from numpy's PCG64 generator so builds are reproducible bit for bit.

The loss path fuses the final softmax with cross-entropy: the loss is
computed from the pre-softmax logits via log-sum-exp and the backward pass
starts from (probabilities - one_hot) / batch, which is both exact and
numerically stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from . import layers as _layers
from .specs import NetworkSpec, SoftmaxSpec, infer_shapes, parameter_count

__all__ = ["Network", "ModelArtifact", "build_network"]


@dataclass(frozen=True)
class ModelArtifact:
    """A trained model: spec, flat parameters, batch-norm buffers, metadata."""

    spec: NetworkSpec
    params: np.ndarray = field(repr=False)
    buffers: np.ndarray = field(repr=False)
    metadata: dict[str, Any]

    def __post_init__(self) -> None:
        declared = parameter_count(self.spec)
        if self.params.shape != (declared,):
            raise ValueError(
                f"artifact carries {self.params.shape[0]} parameters, "
                f"spec declares {declared}"
            )

    def to_network(self) -> "Network":
        net = build_network(self.spec)
        net.set_param_vector(self.params)
        net.set_buffer_vector(self.buffers)
        return net

    def inference_network(self) -> "Network":
        """Shared rebuilt network for repeated inference-mode calls."""
        net = getattr(self, "_inference_network", None)
        if net is None:
            net = self.to_network()
            object.__setattr__(self, "_inference_network", net)
        return net

    @property
    def modality(self) -> str:
        return str(self.metadata.get("modality", "unknown"))


class Network:
    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.shapes = infer_shapes(spec)
        self.layers = [_layers.build_layer(s) for s in spec.layers]
        rng = np.random.default_rng(spec.seed)
        for layer in self.layers:
            layer.init_params(rng)

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    # -- evaluation ------------------------------------------------------

    def forward(self, batch: np.ndarray, training: bool = False) -> np.ndarray:
        """Class probabilities for a [batch, *input_shape] array."""
        x = np.asarray(batch, dtype=np.float64)
        if x.shape[1:] != self.spec.input_shape:
            raise ValueError(
                f"batch shape {x.shape[1:]} does not match input shape {self.spec.input_shape}"
            )
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def loss_and_gradient(self, batch: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean cross-entropy and the flat parameter gradient (training mode)."""
        labels = np.asarray(labels)
        if labels.ndim != 1 or labels.shape[0] != batch.shape[0]:
            raise ValueError("labels must be one class index per batch row")
        c = self.num_classes
        if labels.min() < 0 or labels.max() >= c:
            raise ValueError(f"label out of range [0, {c})")
        if not isinstance(self.layers[-1].spec, SoftmaxSpec):
            raise ValueError("loss requires a softmax-terminated network")

        x = np.asarray(batch, dtype=np.float64)
        for layer in self.layers[:-1]:
            x = layer.forward(x, training=True)
        logits = x
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        n = batch.shape[0]
        loss = float(-log_probs[np.arange(n), labels].mean())

        probs = np.exp(log_probs)
        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        dx = dlogits
        for layer in reversed(self.layers[:-1]):
            dx = layer.backward(dx)
        return loss, self.grad_vector()

    # -- flat parameter views --------------------------------------------

    def _param_items(self):
        for layer in self.layers:
            for name in layer.params:
                yield layer, name

    def param_vector(self) -> np.ndarray:
        parts = [layer.params[name].ravel() for layer, name in self._param_items()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def grad_vector(self) -> np.ndarray:
        parts = [layer.grads[name].ravel() for layer, name in self._param_items()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        offset = 0
        for layer, name in self._param_items():
            size = layer.params[name].size
            layer.params[name] = vec[offset : offset + size].reshape(layer.params[name].shape).copy()
            offset += size
        if offset != vec.size:
            raise ValueError(f"parameter vector has {vec.size} entries, network needs {offset}")

    def buffer_vector(self) -> np.ndarray:
        parts = [
            layer.buffers[name].ravel() for layer in self.layers for name in layer.buffers
        ]
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_buffer_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        offset = 0
        for layer in self.layers:
            for name in layer.buffers:
                size = layer.buffers[name].size
                layer.buffers[name] = (
                    vec[offset : offset + size].reshape(layer.buffers[name].shape).copy()
                )
                offset += size
        if offset != vec.size:
            raise ValueError(f"buffer vector has {vec.size} entries, network needs {offset}")

    def to_artifact(self, metadata: Optional[dict[str, Any]] = None) -> ModelArtifact:
        return ModelArtifact(
            spec=self.spec,
            params=self.param_vector(),
            buffers=self.buffer_vector(),
            metadata=dict(metadata or {}),
        )


def build_network(spec: NetworkSpec) -> Network:
    """Shape-check the spec and return an initialized network.

    Networks are classifiers here, so the stack must end in a softmax over a
    flat class vector; use infer_shapes directly to propagate shapes through
    partial stacks.
    """
    if not spec.layers or not isinstance(spec.layers[-1], SoftmaxSpec):
        raise ValueError("network spec must end in a softmax layer")
    return Network(spec)
