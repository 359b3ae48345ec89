"""Vectorized numpy kernels for convolution and max pooling.

These are the fallback implementations used when the compiled extension is
unavailable.  Convolution goes through an im2col matrix product; pooling uses
a strided window view.  All kernels take an already-padded input and operate
on float64 arrays.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(xp: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    # [B, C, Ho, Wo, k, k] view into the padded input
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(xp: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    n_filters = w.shape[0]
    kernel = w.shape[2]
    win = _windows(xp, kernel, stride)
    batch, _, out_h, out_w = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, -1)
    out = cols @ w.reshape(n_filters, -1).T + b
    return np.ascontiguousarray(out.reshape(batch, out_h, out_w, n_filters).transpose(0, 3, 1, 2))


def conv2d_backward(
    xp: np.ndarray, w: np.ndarray, dy: np.ndarray, stride: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_filters = w.shape[0]
    kernel = w.shape[2]
    batch, channels = xp.shape[0], xp.shape[1]
    out_h, out_w = dy.shape[2], dy.shape[3]

    win = _windows(xp, kernel, stride)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, -1)
    dy_flat = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(-1, n_filters)

    db = dy_flat.sum(axis=0)
    dw = (dy_flat.T @ cols).reshape(w.shape)

    dcols = dy_flat @ w.reshape(n_filters, -1)
    dwin = dcols.reshape(batch, out_h, out_w, channels, kernel, kernel)
    dwin = dwin.transpose(0, 3, 4, 5, 1, 2)  # [B, C, k, k, Ho, Wo]
    dxp = np.zeros_like(xp)
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, :, i : i + out_h * stride : stride, j : j + out_w * stride : stride] += dwin[
                :, :, i, j
            ]
    return dxp, dw, db


def maxpool_forward(x: np.ndarray, window: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    batch, channels, height, width = x.shape
    win = _windows(x, window, stride)
    out_h, out_w = win.shape[2], win.shape[3]
    flat = win.reshape(batch, channels, out_h, out_w, window * window)
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    oh = np.arange(out_h)[:, None] * stride
    ow = np.arange(out_w)[None, :] * stride
    src_h = oh[None, None] + local // window
    src_w = ow[None, None] + local % window
    arg = (src_h * width + src_w).astype(np.int64)
    return np.ascontiguousarray(out), arg


def maxpool_backward(dy: np.ndarray, arg: np.ndarray, height: int, width: int) -> np.ndarray:
    batch, channels = dy.shape[0], dy.shape[1]
    dx = np.zeros((batch, channels, height * width), dtype=dy.dtype)
    b_idx = np.arange(batch)[:, None, None, None]
    c_idx = np.arange(channels)[None, :, None, None]
    np.add.at(dx, (b_idx, c_idx, arg), dy)
    return dx.reshape(batch, channels, height, width)
