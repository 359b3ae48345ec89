"""Shared test utilities: finite-difference gradient oracle."""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5
GRAD_TOLERANCE = 1e-4


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max relative disagreement; entries where both sides sit below the
    finite-difference noise floor (~1e-9) count as agreeing zeros."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    both_zero = (np.abs(a) < 1e-9) & (np.abs(b) < 1e-9)
    rel = np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))
    return float(np.max(np.where(both_zero, 0.0, rel)))


def central_difference(objective, array: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """d objective / d array by central differences, mutating array in place."""
    grad = np.zeros(array.size)
    flat = array.ravel()
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        f_plus = objective()
        flat[i] = original - h
        f_minus = objective()
        flat[i] = original
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(array.shape)


def sample_layer_case(kind: str, seed: int):
    """Randomized small layer + input for one gradient-check run."""
    from pagefuse.nn import (
        BatchNormSpec,
        Conv2DSpec,
        DenseSpec,
        MaxPool2DSpec,
        ReLUSpec,
    )
    from pagefuse.nn.layers import build_layer

    rng = np.random.default_rng(seed)
    if kind == "dense":
        b, d_in, d_out = rng.integers(2, 6), int(rng.integers(2, 7)), int(rng.integers(2, 6))
        spec, x = DenseSpec(d_in, d_out), rng.normal(size=(b, d_in))
    elif kind == "conv2d":
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        kernel = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, 2))
        side = int(rng.integers(kernel, kernel + 5))
        spec = Conv2DSpec(c_in, c_out, kernel, stride, padding)
        x = rng.normal(size=(int(rng.integers(1, 4)), c_in, side, side))
    elif kind == "maxpool2d":
        window = int(rng.integers(2, 4))
        stride = int(rng.integers(1, 3))
        side = int(rng.integers(window, window + 5))
        spec = MaxPool2DSpec(window, stride)
        # spread values out so no window has a near-tie at the FD step size
        x = rng.normal(size=(2, 2, side, side)) * 10.0
    elif kind == "batchnorm":
        features = int(rng.integers(2, 5))
        spec = BatchNormSpec(features)
        if seed % 2 == 0:
            x = rng.normal(loc=1.5, scale=2.0, size=(int(rng.integers(3, 6)), features))
        else:
            side = int(rng.integers(2, 5))
            x = rng.normal(loc=-0.5, scale=1.5, size=(2, features, side, side))
    elif kind == "relu":
        spec = ReLUSpec()
        x = rng.normal(size=(3, int(rng.integers(2, 8)))) * 5.0
    else:
        raise ValueError(f"no sampler for layer kind {kind!r}")
    layer = build_layer(spec)
    layer.init_params(rng)
    return layer, x, rng


def softmax_cross_entropy_check(seed: int) -> float:
    """Relative error between analytic and FD gradients at the logits."""
    rng = np.random.default_rng(seed)
    n, c = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    logits = rng.normal(size=(n, c))
    labels = rng.integers(0, c, size=n)

    def loss() -> float:
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return float(-log_probs[np.arange(n), labels].mean())

    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    analytic = probs.copy()
    analytic[np.arange(n), labels] -= 1.0
    analytic /= n
    return rel_error(analytic, central_difference(loss, logits))


def check_layer_gradients(layer, x: np.ndarray, rng: np.random.Generator) -> dict[str, float]:
    """Compare analytic layer gradients against the finite-difference oracle.

    The scalar objective is sum(forward(x) * weights) with fixed random
    weights, which exercises the full Jacobian.  Returns the relative error
    for the input and each parameter array.
    """
    probe = rng.normal(size=layer.forward(x, training=True).shape)

    def objective() -> float:
        return float(np.sum(layer.forward(x, training=True) * probe))

    layer.forward(x, training=True)
    dx_analytic = layer.backward(probe)
    param_grads = {name: layer.grads[name].copy() for name in layer.params}

    errors = {"input": rel_error(dx_analytic, central_difference(objective, x))}
    for name, values in layer.params.items():
        errors[name] = rel_error(param_grads[name], central_difference(objective, values))
    return errors
