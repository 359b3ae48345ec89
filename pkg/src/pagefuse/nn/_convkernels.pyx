# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for convolution and max pooling.

Same contracts as the numpy fallback: inputs are already padded, float64,
C-contiguous.  Convolution streams one input row per (channel, kernel-row,
kernel-col) with a contiguous output accumulator; pooling walks each window
once keeping the first maximum.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] xp, double[:, :, :, ::1] w,
                   double[::1] b, int stride):
    cdef Py_ssize_t batch = xp.shape[0]
    cdef Py_ssize_t channels = xp.shape[1]
    cdef Py_ssize_t in_h = xp.shape[2]
    cdef Py_ssize_t in_w = xp.shape[3]
    cdef Py_ssize_t n_filters = w.shape[0]
    cdef Py_ssize_t kernel = w.shape[2]
    cdef Py_ssize_t out_h = (in_h - kernel) // stride + 1
    cdef Py_ssize_t out_w = (in_w - kernel) // stride + 1

    y_arr = np.empty((batch, n_filters, out_h, out_w), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t n, f, c, i, j, oh, ow
    cdef double wv
    cdef const double* xrow
    cdef double* yrow

    with nogil:
        for n in range(batch):
            for f in range(n_filters):
                for oh in range(out_h):
                    yrow = &y[n, f, oh, 0]
                    for ow in range(out_w):
                        yrow[ow] = b[f]
                for c in range(channels):
                    for i in range(kernel):
                        for j in range(kernel):
                            wv = w[f, c, i, j]
                            if stride == 1:
                                for oh in range(out_h):
                                    xrow = &xp[n, c, oh + i, j]
                                    yrow = &y[n, f, oh, 0]
                                    for ow in range(out_w):
                                        yrow[ow] += wv * xrow[ow]
                            else:
                                for oh in range(out_h):
                                    xrow = &xp[n, c, oh * stride + i, j]
                                    yrow = &y[n, f, oh, 0]
                                    for ow in range(out_w):
                                        yrow[ow] += wv * xrow[ow * stride]
    return y_arr


def conv2d_backward(double[:, :, :, ::1] xp, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] dy, int stride):
    cdef Py_ssize_t batch = xp.shape[0]
    cdef Py_ssize_t channels = xp.shape[1]
    cdef Py_ssize_t n_filters = w.shape[0]
    cdef Py_ssize_t kernel = w.shape[2]
    cdef Py_ssize_t out_h = dy.shape[2]
    cdef Py_ssize_t out_w = dy.shape[3]

    dxp_arr = np.zeros((batch, channels, xp.shape[2], xp.shape[3]), dtype=np.float64)
    dw_arr = np.zeros((n_filters, channels, kernel, kernel), dtype=np.float64)
    db_arr = np.zeros(n_filters, dtype=np.float64)
    cdef double[:, :, :, ::1] dxp = dxp_arr
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t n, f, c, i, j, oh, ow
    cdef double wv, dwv, g
    cdef const double* xrow
    cdef const double* dyrow
    cdef double* dxrow

    with nogil:
        for n in range(batch):
            for f in range(n_filters):
                for oh in range(out_h):
                    dyrow = &dy[n, f, oh, 0]
                    for ow in range(out_w):
                        db[f] += dyrow[ow]
                for c in range(channels):
                    for i in range(kernel):
                        for j in range(kernel):
                            wv = w[f, c, i, j]
                            dwv = 0.0
                            if stride == 1:
                                for oh in range(out_h):
                                    xrow = &xp[n, c, oh + i, j]
                                    dxrow = &dxp[n, c, oh + i, j]
                                    dyrow = &dy[n, f, oh, 0]
                                    for ow in range(out_w):
                                        g = dyrow[ow]
                                        dwv += xrow[ow] * g
                                        dxrow[ow] += wv * g
                            else:
                                for oh in range(out_h):
                                    xrow = &xp[n, c, oh * stride + i, j]
                                    dxrow = &dxp[n, c, oh * stride + i, j]
                                    dyrow = &dy[n, f, oh, 0]
                                    for ow in range(out_w):
                                        g = dyrow[ow]
                                        dwv += xrow[ow * stride] * g
                                        dxrow[ow * stride] += wv * g
                            dw[f, c, i, j] += dwv
    return dxp_arr, dw_arr, db_arr


def maxpool_forward(double[:, :, :, ::1] x, int window, int stride):
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t channels = x.shape[1]
    cdef Py_ssize_t in_h = x.shape[2]
    cdef Py_ssize_t in_w = x.shape[3]
    cdef Py_ssize_t out_h = (in_h - window) // stride + 1
    cdef Py_ssize_t out_w = (in_w - window) // stride + 1

    y_arr = np.empty((batch, channels, out_h, out_w), dtype=np.float64)
    arg_arr = np.empty((batch, channels, out_h, out_w), dtype=np.int64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef long long[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, c, oh, ow, i, j, ih, iw, best_i
    cdef double best, v

    with nogil:
        for n in range(batch):
            for c in range(channels):
                for oh in range(out_h):
                    for ow in range(out_w):
                        best = x[n, c, oh * stride, ow * stride]
                        best_i = (oh * stride) * in_w + ow * stride
                        for i in range(window):
                            ih = oh * stride + i
                            for j in range(window):
                                iw = ow * stride + j
                                v = x[n, c, ih, iw]
                                if v > best:
                                    best = v
                                    best_i = ih * in_w + iw
                        y[n, c, oh, ow] = best
                        arg[n, c, oh, ow] = best_i
    return y_arr, arg_arr


def maxpool_backward(double[:, :, :, ::1] dy, long long[:, :, :, ::1] arg,
                     int height, int width):
    cdef Py_ssize_t batch = dy.shape[0]
    cdef Py_ssize_t channels = dy.shape[1]
    cdef Py_ssize_t out_h = dy.shape[2]
    cdef Py_ssize_t out_w = dy.shape[3]

    dx_arr = np.zeros((batch, channels, height, width), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, c, oh, ow
    cdef long long a

    with nogil:
        for n in range(batch):
            for c in range(channels):
                for oh in range(out_h):
                    for ow in range(out_w):
                        a = arg[n, c, oh, ow]
                        dx[n, c, a // width, a % width] += dy[n, c, oh, ow]
    return dx_arr
