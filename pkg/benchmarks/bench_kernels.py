"""Time the compiled kernels against the numpy fallback.

Run ``python benchmarks/bench_kernels.py``. Shapes match a training step of
the default denoiser (batch 8, 32x32 crops, 16 channels).
"""

import argparse
import timeit

import numpy as np

from smdsr import kernels


def cases(C, N, H, W, k, dil):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((C, N, H, W)).astype(np.float32)
    cols = np.empty((C * k * k, N * H * W), np.float32)
    out = np.empty_like(x)
    flat = x.reshape(-1)
    sig, act, dact = (np.empty_like(flat) for _ in range(3))
    kernels.silu_forward_numpy(flat, sig, act)
    backends = {"numpy": (kernels.im2col_numpy, kernels.col2im_numpy, kernels.silu_backward_numpy)}
    if kernels._compiled is not None:
        c = kernels._compiled
        backends["cython"] = (c.im2col, c.col2im, c.silu_backward)
    for name, (i2c, c2i, sb) in backends.items():
        yield name, "im2col", lambda f=i2c: f(x, k, cols, dil)
        yield name, "col2im", lambda f=c2i: f(cols, k, out, dil)
        yield name, "silu_bwd", lambda f=sb: f(flat, sig, flat, dact)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--kernel", type=int, default=3)
    ap.add_argument("--dilation", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    times = {}
    shape = (args.channels, args.batch, args.size, args.size, args.kernel, args.dilation)
    for backend, op, fn in cases(*shape):
        fn()
        n = 10
        best = min(timeit.repeat(fn, number=n, repeat=args.repeat)) / n
        times[backend, op] = best
    print(f"shape C,N,H,W,k,dil = {shape}")
    print(f"{'op':<10}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for op in ("im2col", "col2im", "silu_bwd"):
        a = times["numpy", op] * 1e3
        if ("cython", op) in times:
            b = times["cython", op] * 1e3
            print(f"{op:<10}{a:>12.3f}{b:>12.3f}{a / b:>9.1f}x")
        else:
            print(f"{op:<10}{a:>12.3f}{'n/a':>12}")


if __name__ == "__main__":
    main()
