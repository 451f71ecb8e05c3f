"""Small conditional convolutional denoiser with hand-written backprop.

Architecture::

    h = conv_in([x_t, cond]) + time_proj(sinusoid(t))
    h = h + conv_j(silu(h))            for j in range(depth), conv_j dilated by g**j
    out = scale[t] * head(silu(h)) + skip[t] * x_t

All convolutions are square, stride 1, zero-padded to keep the spatial size.
``scale`` and ``skip`` are learned scalars per step. At the last step the
sampler divides by ``sqrt(1 - beta_T)`` (about 0.03), so the estimate there
must be very precise; the target is almost exactly ``x_t`` and its other
terms change abruptly between the final two steps. Per-step output
coefficients let the network meet that without a sharp time dependence
inside the convolutions.

Internally activations are channel-major ``(C, N*H*W)`` so that each
convolution is one im2col followed by one matrix product.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from smdsr import kernels

TIME_BASE = 10000.0


@dataclass(frozen=True)
class DenoiserSpec:
    x_channels: int = 3
    cond_channels: int = 3
    width: int = 32
    depth: int = 4
    kernel: int = 3
    temb_dim: int = 32
    dilation_growth: int = 1  # block j is dilated by dilation_growth ** j
    steps: int = 100  # largest step t the network accepts

    def __post_init__(self):
        for name in ("x_channels", "cond_channels", "width", "depth", "kernel", "temb_dim", "dilation_growth", "steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.temb_dim % 2:
            raise ValueError("time embedding dimension must be even")

    def dilation(self, j: int) -> int:
        return self.dilation_growth ** j

    @property
    def in_channels(self) -> int:
        return self.x_channels + self.cond_channels

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        k2 = self.kernel * self.kernel
        w = self.width
        layers = [
            ("conv_in.w", (w, self.in_channels * k2)),
            ("conv_in.b", (w,)),
            ("time.w", (w, self.temb_dim)),
            ("time.b", (w,)),
        ]
        for j in range(self.depth):
            layers += [(f"block{j}.w", (w, w * k2)), (f"block{j}.b", (w,))]
        layers += [("head.w", (self.x_channels, w * k2)), ("head.b", (self.x_channels,))]
        layers += [("out.scale", (self.steps + 1,)), ("out.skip", (self.steps + 1,))]
        return layers

    def num_params(self) -> int:
        return sum(math.prod(shape) for _, shape in self.layout())


@dataclass
class DenoiserParams:
    spec: DenoiserSpec
    vector: np.ndarray
    stamp: int = 0  # bumped on every in-place update; caches remember it

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (self.spec.num_params(),):
            raise ValueError(
                f"parameter vector has {self.vector.size} entries, layout needs {self.spec.num_params()}"
            )

    def views(self) -> dict[str, np.ndarray]:
        out, offset = {}, 0
        for name, shape in self.spec.layout():
            size = math.prod(shape)
            out[name] = self.vector[offset:offset + size].reshape(shape)
            offset += size
        return out


def init_params(spec: DenoiserSpec, seed: int, skip=None) -> DenoiserParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit scales.

    ``skip`` seeds the per-step skip table (zeros if omitted). Training passes
    ``sqrt(1 - alpha_bar)``, so near the end of the schedule the estimate
    starts out as ``x_t`` itself rather than having to learn that slowly,
    one sampled step at a time.
    """
    rng = np.random.default_rng(seed)
    params = DenoiserParams(spec, np.zeros(spec.num_params()))
    for name, arr in params.views().items():
        if name.endswith(".w"):
            bound = 1.0 / math.sqrt(arr.shape[1])
            arr[...] = rng.uniform(-bound, bound, size=arr.shape)
        elif name == "out.scale":
            arr[...] = 1.0
        elif name == "out.skip" and skip is not None:
            arr[...] = skip
    return params


def time_embedding(t, dim: int, base: float = TIME_BASE) -> np.ndarray:
    """Sinusoidal embedding ``[sin(t w_j), cos(t w_j)]``, shape ``(len(t), dim)``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = base ** (-np.arange(half) / half)
    angle = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angle), np.cos(angle)], axis=1)


@dataclass
class ForwardCache:
    params: DenoiserParams
    stamp: int
    shape: tuple[int, int, int, int]
    dtype: np.dtype
    cols_in: np.ndarray
    temb: np.ndarray
    t: np.ndarray
    x_t: np.ndarray
    blocks: list = field(default_factory=list)  # (h, sig, cols) per block
    head: tuple = ()
    head_out: np.ndarray | None = None


def forward(params: DenoiserParams, x_t: np.ndarray, t, condition: np.ndarray):
    """Predict the training target for a batch ``(N, C, H, W)`` or one image ``(C, H, W)``.

    ``t`` is a step or one step per batch element. Computation runs in the
    dtype of ``x_t``. Returns ``(estimate, cache)``.
    """
    spec = params.spec
    single = x_t.ndim == 3
    if single:
        x_t, condition = x_t[None], condition[None]
    if x_t.ndim != 4 or condition.ndim != 4:
        raise ValueError("expected (N, C, H, W) inputs")
    if x_t.shape[1] != spec.x_channels or condition.shape[1] != spec.cond_channels:
        raise ValueError(
            f"channel mismatch: x_t has {x_t.shape[1]}, condition {condition.shape[1]}; "
            f"spec expects {spec.x_channels} and {spec.cond_channels}"
        )
    if x_t.shape[0] != condition.shape[0] or x_t.shape[2:] != condition.shape[2:]:
        raise ValueError(f"x_t {x_t.shape} and condition {condition.shape} disagree")
    dtype = x_t.dtype if x_t.dtype in (np.float32, np.float64) else np.dtype(np.float64)
    x_t = x_t.astype(dtype, copy=False)
    N, _, H, W = x_t.shape
    k = spec.kernel
    wts = {name: v.astype(dtype, copy=False) for name, v in params.views().items()}

    a = np.concatenate([x_t, condition], axis=1).astype(dtype, copy=False)
    a = np.ascontiguousarray(a.transpose(1, 0, 2, 3))
    cols_in = kernels.im2col(a, k)
    h = wts["conv_in.w"] @ cols_in
    h += wts["conv_in.b"][:, None]

    t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (N,))
    temb = time_embedding(t_arr, spec.temb_dim).astype(dtype)
    shift = temb @ wts["time.w"].T + wts["time.b"]  # (N, width)
    h.reshape(spec.width, N, H * W)[...] += shift.T[:, :, None]

    if t_arr.min() < 0 or t_arr.max() > spec.steps:
        raise ValueError(f"step outside 0..{spec.steps}")
    scale = wts["out.scale"][t_arr][:, None, None, None]
    skip = wts["out.skip"][t_arr][:, None, None, None]
    cache = ForwardCache(params, params.stamp, (N, spec.x_channels, H, W), dtype, cols_in, temb, t_arr, x_t)
    for j in range(spec.depth):
        s, sig = kernels.silu(h)
        cols = kernels.im2col(s.reshape(spec.width, N, H, W), k, spec.dilation(j))
        cache.blocks.append((h, sig, cols))
        h = h + wts[f"block{j}.w"] @ cols
        h += wts[f"block{j}.b"][:, None]

    s, sig = kernels.silu(h)
    cols = kernels.im2col(s.reshape(spec.width, N, H, W), k)
    cache.head = (h, sig, cols)
    out = wts["head.w"] @ cols
    out += wts["head.b"][:, None]
    out = out.reshape(spec.x_channels, N, H, W).transpose(1, 0, 2, 3)
    cache.head_out = out
    out = scale * out + skip * x_t
    return (out[0] if single else np.ascontiguousarray(out)), cache


def backward(params: DenoiserParams, cache: ForwardCache, grad_output: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(grad_output * estimate)`` with respect to the parameter vector."""
    if cache.params is not params or cache.stamp != params.stamp:
        raise ValueError("stale cache: parameters changed since the forward pass")
    spec = params.spec
    if grad_output.ndim == 3:
        grad_output = grad_output[None]
    if grad_output.shape != cache.shape:
        raise ValueError(f"grad_output shape {grad_output.shape} != estimate shape {cache.shape}")
    N, _, H, W = cache.shape
    k = spec.kernel
    dtype = cache.dtype
    wts = {name: v.astype(dtype, copy=False) for name, v in params.views().items()}
    grads = DenoiserParams(spec, np.zeros(spec.num_params())).views()
    act_shape = (spec.width, N, H, W)

    go = grad_output.astype(dtype, copy=False)
    np.add.at(grads["out.skip"], cache.t, np.einsum("nchw,nchw->n", go, cache.x_t))
    np.add.at(grads["out.scale"], cache.t, np.einsum("nchw,nchw->n", go, cache.head_out))
    go = go * wts["out.scale"][cache.t][:, None, None, None]
    g = np.ascontiguousarray(go.transpose(1, 0, 2, 3))
    g = g.reshape(spec.x_channels, -1)
    h, sig, cols = cache.head
    grads["head.w"][...] = g @ cols.T
    grads["head.b"][...] = g.sum(axis=1)
    ds = kernels.col2im(wts["head.w"].T @ g, k, act_shape).reshape(spec.width, -1)
    dh = kernels.silu_grad(h, sig, ds)

    for j in reversed(range(spec.depth)):
        h, sig, cols = cache.blocks[j]
        grads[f"block{j}.w"][...] = dh @ cols.T
        grads[f"block{j}.b"][...] = dh.sum(axis=1)
        ds = kernels.col2im(wts[f"block{j}.w"].T @ dh, k, act_shape, spec.dilation(j)).reshape(spec.width, -1)
        dh = dh + kernels.silu_grad(h, sig, ds)

    dshift = dh.reshape(spec.width, N, H * W).sum(axis=2)  # (width, N)
    grads["time.w"][...] = dshift @ cache.temb
    grads["time.b"][...] = dshift.sum(axis=1)
    grads["conv_in.w"][...] = dh @ cache.cols_in.T
    grads["conv_in.b"][...] = dh.sum(axis=1)
    return np.concatenate([v.ravel() for v in grads.values()])


def mse_loss_and_grad(params: DenoiserParams, x_t, t, condition, target):
    """Mean squared error between target and estimate, with its parameter gradient."""
    est, cache = forward(params, x_t, t, condition)
    diff = est - target.astype(est.dtype, copy=False)
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    grad = backward(params, cache, (2.0 / diff.size) * diff)
    return loss, grad


def as_callable(params: DenoiserParams, dtype=np.float32):
    """Wrap parameters as ``denoiser(x_t, t, condition) -> estimate``."""
    def denoise(x_t, t, condition):
        est, _ = forward(params, x_t.astype(dtype, copy=False), t, condition.astype(dtype, copy=False))
        return est.astype(np.float64)
    return denoise


# ---------------------------------------------------------------------------
# Adam with cosine learning-rate decay


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr0: float = 2e-4
    total_steps: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), **hyper)


def cosine_lr(lr0: float, k: int, total: int) -> float:
    k = min(max(k, 0), total)
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * k / total))


def adam_step(state: AdamState, params: DenoiserParams, grads: np.ndarray) -> float:
    """Apply one bias-corrected Adam update in place; returns the learning rate used."""
    if grads.shape != params.vector.shape:
        raise ValueError("gradient and parameter vectors differ in length")
    lr = cosine_lr(state.lr0, state.step, state.total_steps)
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * np.square(grads)
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    params.vector -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    params.stamp += 1
    return lr


# ---------------------------------------------------------------------------
# Checkpoint file: header, float64 parameters, Adam state (all little-endian)

CKPT_MAGIC = b"SDNC"
CKPT_VERSION = 1
_KIND_CODES = {"cosine": 0, "linear": 1}
_HEADER = struct.Struct("<4sI8IIId")  # magic, version, spec fields, T, kind, s
_ADAM = struct.Struct("<QQddddQ")  # step, total, lr0, beta1, beta2, eps, n


@dataclass
class Checkpoint:
    params: DenoiserParams
    adam: AdamState
    T: int
    kind: str
    s: float


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    spec = ckpt.params.spec
    head = _HEADER.pack(
        CKPT_MAGIC, CKPT_VERSION,
        spec.x_channels, spec.cond_channels, spec.width, spec.depth, spec.kernel, spec.temb_dim,
        spec.dilation_growth, spec.steps, ckpt.T, _KIND_CODES[ckpt.kind], ckpt.s,
    )
    n = spec.num_params()
    body = struct.pack("<Q", n) + ckpt.params.vector.astype("<f8").tobytes()
    a = ckpt.adam
    adam = _ADAM.pack(a.step, a.total_steps, a.lr0, a.beta1, a.beta2, a.eps, n)
    adam += a.m.astype("<f8").tobytes() + a.v.astype("<f8").tobytes()
    Path(path).write_bytes(head + body + adam)


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size or buf[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a denoiser checkpoint")
    _, version, xc, cc, width, depth, kernel, temb, growth, steps, T, kind_code, s = _HEADER.unpack_from(buf)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    kind = {v: k for k, v in _KIND_CODES.items()}[kind_code]
    spec = DenoiserSpec(xc, cc, width, depth, kernel, temb, growth, steps)
    pos = _HEADER.size
    (n,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    if n != spec.num_params():
        raise ValueError(f"{path}: parameter count {n} does not match header layout")
    vec = np.frombuffer(buf, "<f8", n, pos).astype(np.float64)
    pos += 8 * n
    step, total, lr0, b1, b2, eps, n2 = _ADAM.unpack_from(buf, pos)
    pos += _ADAM.size
    m = np.frombuffer(buf, "<f8", n2, pos).astype(np.float64)
    v = np.frombuffer(buf, "<f8", n2, pos + 8 * n2).astype(np.float64)
    adam = AdamState(m, v, step, lr0, total, b1, b2, eps)
    return Checkpoint(DenoiserParams(spec, vec), adam, T, kind, s)
