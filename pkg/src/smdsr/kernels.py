"""Convolution support kernels with a compiled backend and a numpy fallback.

The compiled extension ``smdsr._kernels`` is used when it imports; set
``SMDSR_PURE_PYTHON=1`` to force the numpy path. Both backends expose the
same functions and produce identical results up to float summation order.
"""

from __future__ import annotations

import os

import numpy as np

_compiled = None
if os.environ.get("SMDSR_PURE_PYTHON", "") in ("", "0"):
    try:
        from smdsr import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def im2col_numpy(x: np.ndarray, k: int, cols: np.ndarray, dil: int = 1) -> None:
    C, N, H, W = x.shape
    p = (k // 2) * dil
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    view = cols.reshape(C, k, k, N, H, W)
    for ki in range(k):
        for kj in range(k):
            view[:, ki, kj] = xp[:, :, ki * dil:ki * dil + H, kj * dil:kj * dil + W]


def col2im_numpy(cols: np.ndarray, k: int, out: np.ndarray, dil: int = 1) -> None:
    C, N, H, W = out.shape
    p = (k // 2) * dil
    acc = np.zeros((C, N, H + 2 * p, W + 2 * p), dtype=out.dtype)
    view = cols.reshape(C, k, k, N, H, W)
    for ki in range(k):
        for kj in range(k):
            acc[:, :, ki * dil:ki * dil + H, kj * dil:kj * dil + W] += view[:, ki, kj]
    out[...] = acc[:, :, p:p + H, p:p + W]


def silu_forward_numpy(x, sig, out) -> None:
    np.negative(x, out=sig)
    with np.errstate(over="ignore"):  # exp(-x) = inf gives sigmoid 0, which is exact
        np.exp(sig, out=sig)
    sig += 1.0
    np.reciprocal(sig, out=sig)
    np.multiply(x, sig, out=out)


def silu_backward_numpy(x, sig, grad, out) -> None:
    # d/dx x*s(x) = s * (1 + x * (1 - s))
    np.subtract(1.0, sig, out=out)
    out *= x
    out += 1.0
    out *= sig
    out *= grad


def silu(x: np.ndarray):
    """Returns ``(x * sigmoid(x), sigmoid(x))``.

    Always numpy: its vectorised ``exp`` beats a scalar libm loop (see
    benchmarks/bench_kernels.py), so no compiled variant is kept.
    """
    sig = np.empty_like(x)
    out = np.empty_like(x)
    silu_forward_numpy(x, sig, out)
    return out, sig


if _compiled is not None:
    def im2col(x: np.ndarray, k: int, dil: int = 1) -> np.ndarray:
        C, N, H, W = x.shape
        cols = np.empty((C * k * k, N * H * W), dtype=x.dtype)
        _compiled.im2col(np.ascontiguousarray(x), k, cols, dil)
        return cols

    def col2im(cols: np.ndarray, k: int, shape, dil: int = 1) -> np.ndarray:
        out = np.empty(shape, dtype=cols.dtype)
        _compiled.col2im(np.ascontiguousarray(cols), k, out, dil)
        return out

    def silu_grad(x: np.ndarray, sig: np.ndarray, grad: np.ndarray) -> np.ndarray:
        out = np.empty(x.size, dtype=x.dtype)
        _compiled.silu_backward(
            np.ascontiguousarray(x).reshape(-1),
            np.ascontiguousarray(sig).reshape(-1),
            np.ascontiguousarray(grad, dtype=x.dtype).reshape(-1),
            out,
        )
        return out.reshape(x.shape)
else:
    def im2col(x: np.ndarray, k: int, dil: int = 1) -> np.ndarray:
        C, N, H, W = x.shape
        cols = np.empty((C * k * k, N * H * W), dtype=x.dtype)
        im2col_numpy(x, k, cols, dil)
        return cols

    def col2im(cols: np.ndarray, k: int, shape, dil: int = 1) -> np.ndarray:
        out = np.empty(shape, dtype=cols.dtype)
        col2im_numpy(cols, k, out, dil)
        return out

    def silu_grad(x: np.ndarray, sig: np.ndarray, grad: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        silu_backward_numpy(x, sig, grad, out)
        return out
