"""Runtime layers with hand-derived backward passes.

Every layer caches what its backward pass needs during forward.  Parameter
gradients are stored on the layer in ``grads`` under the same keys as
``params``; ``backward`` returns the gradient with respect to the layer
input.  All arithmetic is float64.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .specs import (
    BatchNormSpec,
    Conv2DSpec,
    DenseSpec,
    FlattenSpec,
    LayerSpec,
    MaxPool2DSpec,
    ReLUSpec,
    SoftmaxSpec,
)

__all__ = ["build_layer", "Layer"]


class Layer:
    """Base: stateless unless a subclass declares params/buffers."""

    spec: LayerSpec

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense(Layer):
    """out = x @ w + b over a [batch, in_dim] input."""

    def init_params(self, rng: np.random.Generator) -> None:
        s = self.spec
        self.params = {
            "w": _glorot(rng, (s.in_dim, s.out_dim), s.in_dim, s.out_dim),
            "b": np.zeros(s.out_dim),
        }

    def forward(self, x, training):
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        self.grads = {"w": self._x.T @ dout, "b": dout.sum(axis=0)}
        return dout @ self.params["w"].T


class Conv2D(Layer):
    """Square-kernel 2-d convolution over [batch, channels, h, w]."""

    def init_params(self, rng: np.random.Generator) -> None:
        s = self.spec
        fan_in = s.in_channels * s.kernel ** 2
        fan_out = s.out_channels * s.kernel ** 2
        self.params = {
            "w": _glorot(rng, (s.out_channels, s.in_channels, s.kernel, s.kernel), fan_in, fan_out),
            "b": np.zeros(s.out_channels),
        }

    def forward(self, x, training):
        self._x = x
        return backend.conv2d_forward(
            x, self.params["w"], self.params["b"], self.spec.stride, self.spec.padding
        )

    def backward(self, dout):
        dx, dw, db = backend.conv2d_backward(
            self._x, self.params["w"], dout, self.spec.stride, self.spec.padding
        )
        self.grads = {"w": dw, "b": db}
        return dx


class MaxPool2D(Layer):
    def forward(self, x, training):
        self._in_hw = x.shape[2], x.shape[3]
        out, self._arg = backend.maxpool_forward(x, self.spec.window, self.spec.stride)
        return out

    def backward(self, dout):
        return backend.maxpool_backward(dout, self._arg, *self._in_hw)


class BatchNorm(Layer):
    """Per-feature normalization; features are axis 1 for 4-d input.

    Training mode normalizes with biased batch statistics and updates the
    running estimates as running = momentum * running + (1 - momentum) * batch;
    inference normalizes with the running estimates.
    """

    def init_params(self, rng: np.random.Generator) -> None:
        s = self.spec
        self.params = {"gamma": np.ones(s.num_features), "beta": np.zeros(s.num_features)}
        self.buffers = {
            "running_mean": np.zeros(s.num_features),
            "running_var": np.ones(s.num_features),
        }

    @staticmethod
    def _axes(x: np.ndarray) -> tuple[int, ...]:
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _expand(self, v: np.ndarray, ndim: int) -> np.ndarray:
        return v if ndim == 2 else v[:, None, None]

    def forward(self, x, training):
        s = self.spec
        axes = self._axes(x)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.buffers["running_mean"] = (
                s.momentum * self.buffers["running_mean"] + (1.0 - s.momentum) * mean
            )
            self.buffers["running_var"] = (
                s.momentum * self.buffers["running_var"] + (1.0 - s.momentum) * var
            )
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + s.epsilon)
        x_hat = (x - self._expand(mean, x.ndim)) * self._expand(inv_std, x.ndim)
        self._x_hat, self._inv_std, self._training = x_hat, inv_std, training
        return self._expand(self.params["gamma"], x.ndim) * x_hat + self._expand(
            self.params["beta"], x.ndim
        )

    def backward(self, dout):
        axes = self._axes(dout)
        x_hat = self._x_hat
        self.grads = {
            "gamma": (dout * x_hat).sum(axis=axes),
            "beta": dout.sum(axis=axes),
        }
        gamma = self._expand(self.params["gamma"], dout.ndim)
        inv_std = self._expand(self._inv_std, dout.ndim)
        if not self._training:
            return dout * gamma * inv_std
        m = dout.size // dout.shape[1] if dout.ndim == 4 else dout.shape[0]
        dy = dout * gamma
        mean_dy = self._expand(dy.sum(axis=axes) / m, dout.ndim)
        mean_dy_xhat = self._expand((dy * x_hat).sum(axis=axes) / m, dout.ndim)
        return inv_std * (dy - mean_dy - x_hat * mean_dy_xhat)


class ReLU(Layer):
    def forward(self, x, training):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0.0)


class Flatten(Layer):
    def forward(self, x, training):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Softmax(Layer):
    """Row-wise softmax, shifted by the row max for stability."""

    def forward(self, x, training):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        self._p = e / e.sum(axis=1, keepdims=True)
        return self._p

    def backward(self, dout):
        p = self._p
        return p * (dout - (dout * p).sum(axis=1, keepdims=True))


_LAYER_TYPES = {
    DenseSpec: Dense,
    Conv2DSpec: Conv2D,
    MaxPool2DSpec: MaxPool2D,
    BatchNormSpec: BatchNorm,
    ReLUSpec: ReLU,
    FlattenSpec: Flatten,
    SoftmaxSpec: Softmax,
}


def build_layer(spec: LayerSpec) -> Layer:
    return _LAYER_TYPES[type(spec)](spec)
