"""Kernel backend selection.

The convolution and pooling inner loops exist in two forms: a compiled
Cython extension and a pure-numpy fallback (im2col convolution, strided
window pooling).  The shipped benchmark (benchmarks/bench_kernels.py) shows
the BLAS-backed numpy convolution beating the compiled loops while the
compiled pooling wins by 3-14x, so the default profile mixes them:

    auto    numpy convolution + compiled pooling (falls back to pure numpy
            when the extension is missing)
    python  pure numpy everywhere
    cython  compiled kernels everywhere (requires the extension)

Select explicitly with ``PAGEFUSE_BACKEND=python|cython|auto``.  Profiles
compute the same math but may differ in final-bit rounding due to summation
order, so trained artifacts are reproducible per profile.

Padding is materialized here so the kernels only ever see valid (unpadded)
convolutions.
"""

from __future__ import annotations

import os

import numpy as np

from . import _convnumpy

try:
    from . import _convkernels  # type: ignore[attr-defined]
except ImportError:
    _convkernels = None

__all__ = [
    "active_backend",
    "available_backends",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool_forward",
    "maxpool_backward",
]


def _select() -> tuple[str, object, object]:
    """Returns (profile name, conv impl, pool impl)."""
    forced = os.environ.get("PAGEFUSE_BACKEND", "auto").lower()
    if forced in ("auto", ""):
        if _convkernels is None:
            return "python", _convnumpy, _convnumpy
        return "mixed", _convnumpy, _convkernels
    if forced == "cython":
        if _convkernels is None:
            raise ImportError(
                "PAGEFUSE_BACKEND=cython but the compiled extension is not available; "
                "reinstall with a C compiler or unset the variable"
            )
        return "cython", _convkernels, _convkernels
    if forced == "python":
        return "python", _convnumpy, _convnumpy
    raise ValueError(f"unknown PAGEFUSE_BACKEND value {forced!r}")


_NAME, _CONV, _POOL = _select()


def active_backend() -> str:
    return _NAME


def available_backends() -> tuple[str, ...]:
    return ("python", "cython") if _convkernels is not None else ("python",)


def get_impl(name: str):
    """Explicit backend module lookup, used by tests and the benchmark."""
    if name == "python":
        return _convnumpy
    if name == "cython":
        if _convkernels is None:
            raise ImportError("compiled backend not available")
        return _convkernels
    raise ValueError(f"unknown backend {name!r}")


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, w, b, stride: int, padding: int):
    return _CONV.conv2d_forward(_pad(x, padding), w, b, stride)


def conv2d_backward(x, w, dy, stride: int, padding: int):
    dxp, dw, db = _CONV.conv2d_backward(_pad(x, padding), w, np.ascontiguousarray(dy), stride)
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(dxp), dw, db


def maxpool_forward(x, window: int, stride: int):
    return _POOL.maxpool_forward(np.ascontiguousarray(x), window, stride)


def maxpool_backward(dy, arg, height: int, width: int):
    return _POOL.maxpool_backward(np.ascontiguousarray(dy), arg, height, width)
