"""Mask-modulated forward diffusion, its posterior, and the reverse sampler.

Images are ``(C, H, W)`` or batched ``(N, C, H, W)`` arrays. The encoded
mask ``e_sam`` is ``(1, H, W)`` (or ``(N, 1, H, W)``) and broadcasts across
channels. Steps ``t`` run from 1 to ``T``; a batch may carry one step per
element as an integer array of length ``N``.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from smdsr.schedule import NoiseSchedule

Denoiser = Callable[[np.ndarray, int, np.ndarray], np.ndarray]


def _coef(values: np.ndarray, t, like: np.ndarray) -> np.ndarray:
    """Look up per-step coefficients shaped to broadcast against ``like``."""
    t = np.asarray(t)
    c = values[t]
    if like.dtype in (np.float32, np.float64):
        c = c.astype(like.dtype)  # keep single-precision inputs in single precision
    if t.ndim == 0:
        return c
    if t.ndim != 1 or like.ndim != 4 or t.shape[0] != like.shape[0]:
        raise ValueError(f"per-element steps need a batch of matching length, got t{t.shape} for {like.shape}")
    return c.reshape(-1, 1, 1, 1)


def _check_shapes(x: np.ndarray, *others) -> None:
    for other in others:
        if other is None:
            continue
        try:
            b = np.broadcast_shapes(x.shape, other.shape)
        except ValueError:
            raise ValueError(f"shape mismatch: {x.shape} vs {other.shape}") from None
        if b != x.shape:
            raise ValueError(f"shape mismatch: {other.shape} does not broadcast to {x.shape}")


def _mask_channel(e_sam: np.ndarray, x: np.ndarray) -> np.ndarray:
    e_sam = np.asarray(e_sam)
    if e_sam.shape[-3] != 1 and e_sam.shape[-3] != x.shape[-3]:
        raise ValueError(f"encoded mask {e_sam.shape} cannot broadcast over image {x.shape}")
    _check_shapes(x, e_sam)
    return e_sam


def forward_step(x_prev, e_sam, sch: NoiseSchedule, t, eps):
    """One modulated forward step: sqrt(1-b) x + sqrt(b) (E + eps)."""
    sch.check_step(t)
    e_sam = _mask_channel(e_sam, x_prev)
    _check_shapes(x_prev, eps)
    beta = _coef(sch.beta, t, x_prev)
    return np.sqrt(1.0 - beta) * x_prev + np.sqrt(beta) * (e_sam + eps)


def forward_jump(x0, e_sam, sch: NoiseSchedule, t, eps):
    """Sample of x_t given x_0: sqrt(abar) x0 + phi E + sqrt(1 - abar) eps."""
    sch.check_step(t)
    e_sam = _mask_channel(e_sam, x0)
    _check_shapes(x0, eps)
    abar = _coef(sch.alpha_bar, t, x0)
    phi = _coef(sch.phi, t, x0)
    return np.sqrt(abar) * x0 + phi * e_sam + np.sqrt(1.0 - abar) * eps


def loss_target(e_sam, eps, sch: NoiseSchedule, t):
    """What the denoiser learns to predict: sqrt(1-abar)/sqrt(beta) E + eps."""
    sch.check_step(t)
    e_sam = _mask_channel(e_sam, eps)
    return _coef(sch.loss_coef(np.arange(1, sch.T + 1)), np.asarray(t) - 1, eps) * e_sam + eps


def posterior_mean_eps(x_t, estimate, sch: NoiseSchedule, t):
    """Posterior mean of x_{t-1} from x_t and a (predicted) training target.

    Pair with variance ``sch.posterior_beta_tilde[t]``.
    """
    sch.check_step(t)
    _check_shapes(x_t, estimate)
    alpha = _coef(sch.alpha, t, x_t)
    beta = _coef(sch.beta, t, x_t)
    abar = _coef(sch.alpha_bar, t, x_t)
    return (x_t - beta / np.sqrt(1.0 - abar) * estimate) / np.sqrt(alpha)


def posterior_mean_x0(x_t, x0, e_sam, eps, sch: NoiseSchedule, t):
    """Posterior mean written as the precision-weighted combination of its two factors.

    Undefined at ``t = 1`` where ``1 - abar_0 = 0``. ``eps`` is accepted so
    the call mirrors :func:`posterior_mean_eps` applied to the true target;
    this form does not use it.
    """
    sch.check_step(t)
    if np.any(np.asarray(t) < 2):
        raise ValueError("the combination form needs t >= 2 (1 - abar_0 vanishes at t = 1)")
    e_sam = _mask_channel(e_sam, x_t)
    _check_shapes(x_t, x0, eps)
    tm1 = np.asarray(t) - 1
    alpha = _coef(sch.alpha, t, x_t)
    beta = _coef(sch.beta, t, x_t)
    bt = _coef(sch.posterior_beta_tilde, t, x_t)
    abar_prev = _coef(sch.alpha_bar, tm1, x_t)
    phi_prev = _coef(sch.phi, tm1, x_t)
    from_step = np.sqrt(alpha) * (x_t - np.sqrt(beta) * e_sam) / beta
    from_start = (np.sqrt(abar_prev) * x0 + phi_prev * e_sam) / (1.0 - abar_prev)
    return bt * (from_step + from_start)


def _clamped_posterior_mean(x_t, estimate, sch: NoiseSchedule, t: int):
    # posterior_mean_eps rewritten through the implied x_0, which is clipped;
    # the two agree exactly whenever the clip is inactive
    abar = sch.alpha_bar[t]
    x0_hat = (x_t - np.sqrt(1.0 - abar) * estimate) / np.sqrt(abar)
    x0_hat = np.clip(x0_hat, -1.0, 1.0)
    c_x0 = np.sqrt(sch.alpha_bar[t - 1]) * sch.beta[t] / (1.0 - abar)
    c_xt = np.sqrt(sch.alpha[t]) * (1.0 - sch.alpha_bar[t - 1]) / (1.0 - abar)
    return c_x0 * x0_hat + c_xt * x_t


@dataclass(frozen=True)
class SamplerOptions:
    seed: int = 0
    clamp_x0: bool = False  # clip the implied x_0 into [-1, 1] at every step
    final_step_noise: bool = False  # add z at t = 1 (a no-op since beta_tilde_1 = 0)
    sampling_noise: bool = True  # False zeroes every z, leaving only the start draw


def reverse_sample(denoiser: Denoiser, condition: np.ndarray, sch: NoiseSchedule,
                   opts: SamplerOptions | None = None) -> np.ndarray:
    """Run the reverse chain from x_T ~ N(0, I) down to x_0.

    ``denoiser(x_t, t, condition)`` predicts the training target. The chain
    takes no mask: whatever structure the model learned comes from its
    weights and the condition alone. Output has the shape of ``condition``.
    """
    opts = opts or SamplerOptions()
    rng = np.random.default_rng(opts.seed)
    x = rng.standard_normal(condition.shape)
    for t in range(sch.T, 0, -1):
        estimate = np.asarray(denoiser(x, t, condition), dtype=np.float64)
        if estimate.shape != x.shape:
            raise ValueError(f"denoiser returned {estimate.shape}, expected {x.shape}")
        if opts.clamp_x0:
            x = _clamped_posterior_mean(x, estimate, sch, t)
        else:
            x = posterior_mean_eps(x, estimate, sch, t)
        if t > 1 or opts.final_step_noise:
            z = rng.standard_normal(x.shape)
            if opts.sampling_noise:
                x = x + np.sqrt(sch.posterior_beta_tilde[t]) * z
    return x
