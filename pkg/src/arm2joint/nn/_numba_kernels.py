"""JIT-compiled hot kernels: 3x3 same-padding convolution and 2x2 max pooling.

Each prange iteration writes a disjoint output slice and accumulates privately,
so results are independent of the worker thread count. Inputs arrive already
zero-padded from the dispatch layer. Kernels compile lazily per dtype (float32
for training, float64 for the gradient-check path) and cache to disk.
"""

import numpy as np
from numba import njit, prange

_JIT = dict(parallel=True, fastmath=True, cache=True, nogil=True)


@njit(**_JIT)
def conv2d_forward(xp, w, b):
    B = xp.shape[0]
    H = xp.shape[1] - 2
    W = xp.shape[2] - 2
    IC = xp.shape[3]
    OC = w.shape[3]
    out = np.empty((B, H, W, OC), dtype=xp.dtype)
    for bi in prange(B):
        acc = np.empty(OC, dtype=xp.dtype)
        for y in range(H):
            for x in range(W):
                for oc in range(OC):
                    acc[oc] = b[oc]
                for ky in range(3):
                    for kx in range(3):
                        for ic in range(IC):
                            a = xp[bi, y + ky, x + kx, ic]
                            for oc in range(OC):
                                acc[oc] += a * w[ky, kx, ic, oc]
                for oc in range(OC):
                    out[bi, y, x, oc] = acc[oc]
    return out


@njit(**_JIT)
def conv2d_backward_dx(wt, dy):
    # wt is w transposed to (3, 3, OC, IC) so the inner loop is unit-stride
    B = dy.shape[0]
    H = dy.shape[1]
    W = dy.shape[2]
    OC = dy.shape[3]
    IC = wt.shape[3]
    dxp = np.zeros((B, H + 2, W + 2, IC), dtype=dy.dtype)
    for bi in prange(B):
        for y in range(H):
            for x in range(W):
                for ky in range(3):
                    for kx in range(3):
                        for oc in range(OC):
                            g = dy[bi, y, x, oc]
                            for ic in range(IC):
                                dxp[bi, y + ky, x + kx, ic] += g * wt[ky, kx, oc, ic]
    return dxp


@njit(**_JIT)
def conv2d_backward_dw(xp, dy):
    B = dy.shape[0]
    H = dy.shape[1]
    W = dy.shape[2]
    OC = dy.shape[3]
    IC = xp.shape[3]
    dw = np.zeros((3, 3, IC, OC), dtype=dy.dtype)
    for tap in prange(9):
        ky = tap // 3
        kx = tap % 3
        for bi in range(B):
            for y in range(H):
                for x in range(W):
                    for ic in range(IC):
                        a = xp[bi, y + ky, x + kx, ic]
                        for oc in range(OC):
                            dw[ky, kx, ic, oc] += a * dy[bi, y, x, oc]
    return dw


@njit(**_JIT)
def maxpool2x2_forward(x):
    B, H, W, C = x.shape
    H2 = H // 2
    W2 = W // 2
    y = np.empty((B, H2, W2, C), dtype=x.dtype)
    idx = np.empty((B, H2, W2, C), dtype=np.uint8)
    for bi in prange(B):
        for i in range(H2):
            for j in range(W2):
                for c in range(C):
                    best = x[bi, 2 * i, 2 * j, c]
                    code = np.uint8(0)
                    v = x[bi, 2 * i, 2 * j + 1, c]
                    if v > best:
                        best = v
                        code = np.uint8(1)
                    v = x[bi, 2 * i + 1, 2 * j, c]
                    if v > best:
                        best = v
                        code = np.uint8(2)
                    v = x[bi, 2 * i + 1, 2 * j + 1, c]
                    if v > best:
                        best = v
                        code = np.uint8(3)
                    y[bi, i, j, c] = best
                    idx[bi, i, j, c] = code
    return y, idx


@njit(**_JIT)
def maxpool2x2_backward(dy, idx, H, W):
    B, H2, W2, C = dy.shape
    dx = np.zeros((B, H, W, C), dtype=dy.dtype)
    for bi in prange(B):
        for i in range(H2):
            for j in range(W2):
                for c in range(C):
                    code = idx[bi, i, j, c]
                    dx[bi, 2 * i + code // 2, 2 * j + code % 2, c] = dy[bi, i, j, c]
    return dx
