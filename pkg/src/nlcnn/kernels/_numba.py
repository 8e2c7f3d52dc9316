"""numba versions of the hot loops; must agree with ``_numpy`` to rounding."""
import numpy as np
from numba import njit


@njit(cache=True)
def im2col3x3(x):
    n, h, w, c = x.shape
    cols = np.zeros((n, h, w, 9, c), dtype=x.dtype)
    for b in range(n):
        for i in range(h):
            for j in range(w):
                for di in range(3):
                    ii = i + di - 1
                    if ii < 0 or ii >= h:
                        continue
                    for dj in range(3):
                        jj = j + dj - 1
                        if jj < 0 or jj >= w:
                            continue
                        t = di * 3 + dj
                        for ch in range(c):
                            cols[b, i, j, t, ch] = x[b, ii, jj, ch]
    return cols.reshape(n * h * w, 9 * c)


@njit(cache=True)
def col2im3x3(cols, n, h, w, c):
    cols = cols.reshape(n, h, w, 9, c)
    gx = np.zeros((n, h, w, c), dtype=cols.dtype)
    for b in range(n):
        for i in range(h):
            for j in range(w):
                for di in range(3):
                    ii = i + di - 1
                    if ii < 0 or ii >= h:
                        continue
                    for dj in range(3):
                        jj = j + dj - 1
                        if jj < 0 or jj >= w:
                            continue
                        t = di * 3 + dj
                        for ch in range(c):
                            gx[b, ii, jj, ch] += cols[b, i, j, t, ch]
    return gx


@njit(cache=True)
def depthwise3x3_forward(x, dw):
    n, h, w, c = x.shape
    y = np.zeros_like(x)
    for b in range(n):
        for i in range(h):
            for j in range(w):
                for di in range(3):
                    ii = i + di - 1
                    if ii < 0 or ii >= h:
                        continue
                    for dj in range(3):
                        jj = j + dj - 1
                        if jj < 0 or jj >= w:
                            continue
                        for ch in range(c):
                            y[b, i, j, ch] += x[b, ii, jj, ch] * dw[di, dj, ch]
    return y


@njit(cache=True)
def depthwise3x3_backward(x, dw, g):
    n, h, w, c = x.shape
    gx = np.zeros_like(x)
    gdw = np.zeros_like(dw)
    for b in range(n):
        for i in range(h):
            for j in range(w):
                for di in range(3):
                    ii = i + di - 1
                    if ii < 0 or ii >= h:
                        continue
                    for dj in range(3):
                        jj = j + dj - 1
                        if jj < 0 or jj >= w:
                            continue
                        for ch in range(c):
                            gdw[di, dj, ch] += x[b, ii, jj, ch] * g[b, i, j, ch]
                            gx[b, ii, jj, ch] += dw[di, dj, ch] * g[b, i, j, ch]
    return gx, gdw


@njit(cache=True)
def maxpool4x4s2_forward(x, oh, ow, pb_h, pb_w):
    n, h, w, c = x.shape
    y = np.empty((n, oh, ow, c), dtype=x.dtype)
    arg = np.empty((n, oh, ow, c), dtype=np.int64)
    for b in range(n):
        for oi in range(oh):
            for oj in range(ow):
                for ch in range(c):
                    best = -np.inf
                    best_k = -1
                    for di in range(4):
                        ii = oi * 2 - pb_h + di
                        if ii < 0 or ii >= h:
                            continue
                        for dj in range(4):
                            jj = oj * 2 - pb_w + dj
                            if jj < 0 or jj >= w:
                                continue
                            v = x[b, ii, jj, ch]
                            if best_k < 0 or v > best:
                                best = v
                                best_k = ii * w + jj
                    y[b, oi, oj, ch] = best
                    arg[b, oi, oj, ch] = best_k
    return y, arg


@njit(cache=True)
def maxpool4x4s2_backward(argmax, g, h, w):
    n, oh, ow, c = g.shape
    gx = np.zeros((n, h, w, c), dtype=g.dtype)
    for b in range(n):
        for oi in range(oh):
            for oj in range(ow):
                for ch in range(c):
                    k = argmax[b, oi, oj, ch]
                    gx[b, k // w, k % w, ch] += g[b, oi, oj, ch]
    return gx
