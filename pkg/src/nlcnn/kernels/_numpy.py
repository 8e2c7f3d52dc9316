"""Pure-numpy versions of the hot loops. Semantics are the reference."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pad(x, top, bottom, left, right, fill):
    # np.pad costs more than the kernels themselves on small tensors
    n, h, w, c = x.shape
    xp = np.full((n, h + top + bottom, w + left + right, c), fill, dtype=x.dtype)
    xp[:, top:top + h, left:left + w] = x
    return xp


def im2col3x3(x):
    n, h, w, c = x.shape
    xp = _pad(x, 1, 1, 1, 1, 0)
    cols = np.empty((n, h, w, 9, c), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            cols[:, :, :, di * 3 + dj, :] = xp[:, di:di + h, dj:dj + w, :]
    return cols.reshape(n * h * w, 9 * c)


def col2im3x3(cols, n, h, w, c):
    cols = cols.reshape(n, h, w, 9, c)
    gp = np.zeros((n, h + 2, w + 2, c), dtype=cols.dtype)
    for di in range(3):
        for dj in range(3):
            gp[:, di:di + h, dj:dj + w, :] += cols[:, :, :, di * 3 + dj, :]
    return np.ascontiguousarray(gp[:, 1:-1, 1:-1, :])


def depthwise3x3_forward(x, dw):
    n, h, w, c = x.shape
    xp = _pad(x, 1, 1, 1, 1, 0)
    y = np.zeros_like(x)
    for di in range(3):
        for dj in range(3):
            y += xp[:, di:di + h, dj:dj + w, :] * dw[di, dj]
    return y


def depthwise3x3_backward(x, dw, g):
    n, h, w, c = x.shape
    xp = _pad(x, 1, 1, 1, 1, 0)
    gp = np.zeros_like(xp)
    gdw = np.empty_like(dw)
    for di in range(3):
        for dj in range(3):
            gdw[di, dj] = np.einsum("nhwc,nhwc->c", xp[:, di:di + h, dj:dj + w, :], g)
            gp[:, di:di + h, dj:dj + w, :] += g * dw[di, dj]
    return np.ascontiguousarray(gp[:, 1:-1, 1:-1, :]), gdw


def maxpool4x4s2_forward(x, oh, ow, pb_h, pb_w):
    n, h, w, c = x.shape
    pad_h = (oh - 1) * 2 + 4 - h - pb_h
    pad_w = (ow - 1) * 2 + 4 - w - pb_w
    xp = _pad(x, pb_h, pad_h, pb_w, pad_w, -np.inf)
    win = sliding_window_view(xp, (4, 4), axis=(1, 2))[:, ::2, ::2]
    win = win.reshape(n, oh, ow, c, 16)
    k = win.argmax(axis=-1)
    y = np.take_along_axis(win, k[..., None], axis=-1)[..., 0]
    ii = np.arange(oh)[None, :, None, None] * 2 - pb_h + k // 4
    jj = np.arange(ow)[None, None, :, None] * 2 - pb_w + k % 4
    return np.ascontiguousarray(y), (ii * w + jj).astype(np.int64)


def maxpool4x4s2_backward(argmax, g, h, w):
    n, oh, ow, c = g.shape
    flat = (np.arange(n)[:, None, None, None] * (h * w) + argmax) * c + np.arange(c)
    gx = np.bincount(flat.ravel(), weights=g.ravel(), minlength=n * h * w * c)
    return gx.astype(g.dtype).reshape(n, h, w, c)
