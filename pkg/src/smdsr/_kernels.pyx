# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im for 'same'-padded, optionally dilated square convolutions.

Both work on channel-major activations ``x[C, N, H, W]``. The column matrix
has shape ``(C * k * k, N * H * W)`` with row ``(c * k + ki) * k + kj``.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


cdef inline void _span(Py_ssize_t off, Py_ssize_t W, Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output columns xx with 0 <= xx + off < W
    lo[0] = -off if off < 0 else 0
    hi[0] = W - off if off > 0 else W
    if lo[0] > W:
        lo[0] = W
    if hi[0] < lo[0]:
        hi[0] = lo[0]


def im2col(floating[:, :, :, ::1] x, int k, floating[:, ::1] cols, int dil=1):
    cdef Py_ssize_t C = x.shape[0], N = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t p = k // 2
    cdef Py_ssize_t c, ki, kj, n, y, xx, sy, row, base, x_lo, x_hi, oy, ox
    cdef floating* dst
    with nogil:
        for c in range(C):
            for ki in range(k):
                oy = (ki - p) * dil
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    ox = (kj - p) * dil
                    _span(ox, W, &x_lo, &x_hi)
                    for n in range(N):
                        for y in range(H):
                            base = (n * H + y) * W
                            dst = &cols[row, base]
                            sy = y + oy
                            if sy < 0 or sy >= H:
                                for xx in range(W):
                                    dst[xx] = 0
                                continue
                            for xx in range(x_lo):
                                dst[xx] = 0
                            for xx in range(x_lo, x_hi):
                                dst[xx] = x[c, n, sy, xx + ox]
                            for xx in range(x_hi, W):
                                dst[xx] = 0


def col2im(floating[:, ::1] cols, int k, floating[:, :, :, ::1] out, int dil=1):
    """Scatter-add columns back onto ``out`` (which is overwritten)."""
    cdef Py_ssize_t C = out.shape[0], N = out.shape[1], H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t p = k // 2
    cdef Py_ssize_t c, ki, kj, n, y, xx, sy, row, base, x_lo, x_hi, oy, ox
    cdef floating* src
    with nogil:
        for c in range(C):
            for n in range(N):
                for y in range(H):
                    for xx in range(W):
                        out[c, n, y, xx] = 0
            for ki in range(k):
                oy = (ki - p) * dil
                for kj in range(k):
                    row = (c * k + ki) * k + kj
                    ox = (kj - p) * dil
                    _span(ox, W, &x_lo, &x_hi)
                    for n in range(N):
                        for y in range(H):
                            sy = y + oy
                            if sy < 0 or sy >= H:
                                continue
                            base = (n * H + y) * W
                            src = &cols[row, base]
                            for xx in range(x_lo, x_hi):
                                out[c, n, sy, xx + ox] += src[xx]


def silu_backward(floating[::1] x, floating[::1] sig, floating[::1] grad, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef floating s
    with nogil:
        for i in range(n):
            s = sig[i]
            out[i] = grad[i] * s * (1.0 + x[i] * (1.0 - s))

