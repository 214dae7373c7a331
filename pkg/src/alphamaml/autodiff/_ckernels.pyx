# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im.

Accumulation in col2im runs kernel offset (i, j) outermost so every output
element sums its contributions in the same order as the numpy fallback;
the two backends agree bitwise.
"""
import numpy as np


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((B * Ho * Wo, C * kh * kw), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t b, oy, ox, c, i, j, iy, ix, row, col
    for b in range(B):
        for oy in range(Ho):
            for ox in range(Wo):
                row = (b * Ho + oy) * Wo + ox
                for c in range(C):
                    for i in range(kh):
                        iy = oy * stride - pad + i
                        if iy < 0 or iy >= H:
                            continue
                        col = (c * kh + i) * kw
                        for j in range(kw):
                            ix = ox * stride - pad + j
                            if 0 <= ix < W:
                                o[row, col + j] = x[b, c, iy, ix]
    return out


def col2im(const double[:, ::1] cols, Py_ssize_t B, Py_ssize_t C, Py_ssize_t H,
           Py_ssize_t W, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t Ho = (H + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - kw) // stride + 1
    if cols.shape[0] != B * Ho * Wo or cols.shape[1] != C * kh * kw:
        raise ValueError(
            f"col2im: cols shape ({cols.shape[0]}, {cols.shape[1]}) does not match "
            f"({B * Ho * Wo}, {C * kh * kw})"
        )
    out = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, oy, ox, c, i, j, iy, ix, row
    for i in range(kh):
        for j in range(kw):
            for b in range(B):
                for c in range(C):
                    for oy in range(Ho):
                        iy = oy * stride - pad + i
                        if iy < 0 or iy >= H:
                            continue
                        for ox in range(Wo):
                            ix = ox * stride - pad + j
                            if 0 <= ix < W:
                                row = (b * Ho + oy) * Wo + ox
                                o[b, c, iy, ix] += cols[row, (c * kh + i) * kw + j]
    return out
