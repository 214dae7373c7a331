"""Pure numpy im2col / col2im, used when the compiled extension is absent."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    B, C, H, W = x.shape
    Ho, Wo = _out_size(H, kh, stride, pad), _out_size(W, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :Ho, :Wo]
    # (B, C, Ho, Wo, kh, kw) -> (B, Ho, Wo, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)


def col2im(cols, B, C, H, W, kh, kw, stride, pad):
    Ho, Wo = _out_size(H, kh, stride, pad), _out_size(W, kw, stride, pad)
    if cols.shape != (B * Ho * Wo, C * kh * kw):
        raise ValueError(
            f"col2im: cols shape {cols.shape} does not match ({B * Ho * Wo}, {C * kh * kw})"
        )
    c6 = cols.reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad))
    ye, xe = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + ye:stride, j:j + xe:stride] += c6[:, :, i, j]
    return np.ascontiguousarray(xp[:, :, pad:pad + H, pad:pad + W])
