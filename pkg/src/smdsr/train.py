"""Residual-space training with mask-modulated noise, and mask-free restoration."""

from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from smdsr import data, denoiser, diffusion, mask
from smdsr.data import SCALE, SceneSpec
from smdsr.denoiser import AdamState, Checkpoint, DenoiserSpec
from smdsr.schedule import build_schedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20000
    batch_size: int = 8
    patch_size: int = 32
    T: int = 100
    schedule: str = "cosine"
    lr0: float = 1e-3
    seed: int = 0
    scheme: str = "rope"
    baseline: bool = False  # force the encoded mask to zero (plain DDPM)
    width: int = 16
    depth: int = 3
    kernel: int = 3
    temb_dim: int = 32
    dilation_growth: int = 2  # block dilations 1, 2, 4
    num_scenes: int = 32
    data_dir: str | None = None
    scene: SceneSpec = field(default_factory=SceneSpec)

    def __post_init__(self):
        for name in ("iterations", "batch_size", "patch_size", "T", "num_scenes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.patch_size % SCALE:
            raise ValueError(f"patch size must be a multiple of {SCALE}")
        if self.data_dir is None and self.patch_size > min(self.scene.h, self.scene.w):
            raise ValueError("patch size exceeds the scene size")
        if self.scheme not in mask.SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def denoiser_spec(self) -> DenoiserSpec:
        return DenoiserSpec(3, 3, self.width, self.depth, self.kernel, self.temb_dim, self.dilation_growth, self.T)


@dataclass
class TrainingScene:
    """Per-scene tensors computed once and reused by every crop."""

    residual: np.ndarray  # (3, H, W) x_0
    condition: np.ndarray  # (3, H, W) upsampled LR in unit range
    labels: np.ndarray  # (H, W)


def prepare_scenes(scenes) -> list[TrainingScene]:
    out = []
    for hr, lr, labels in scenes:
        out.append(TrainingScene(
            residual=data.make_residual(hr, lr),
            condition=data.upsample_bilinear(data.to_unit(lr)),
            labels=np.asarray(labels),
        ))
    return out


def sample_timesteps(rng: np.random.Generator, T: int, n: int) -> np.ndarray:
    return rng.integers(1, T + 1, size=n)


def sample_batch(rng, scenes: list[TrainingScene], cfg: TrainConfig):
    """Random aligned crops: returns ``(x0, condition, e_sam)`` batches."""
    p = cfg.patch_size
    n = cfg.batch_size
    x0 = np.empty((n, 3, p, p))
    cond = np.empty((n, 3, p, p))
    e_sam = np.zeros((n, 1, p, p))
    for b in range(n):
        sc = scenes[rng.integers(len(scenes))]
        H, W = sc.labels.shape
        # crop on the LR grid so HR and LR stay aligned
        top = int(rng.integers(0, (H - p) // SCALE + 1)) * SCALE
        left = int(rng.integers(0, (W - p) // SCALE + 1)) * SCALE
        rect = (top, left, p, p)
        x0[b], _, spe = mask.crop_pair(sc.residual, sc.labels, rect, cfg.scheme)
        cond[b] = sc.condition[:, top:top + p, left:left + p]
        if not cfg.baseline:
            e_sam[b] = spe
    return x0, cond, e_sam


def load_training_scenes(cfg: TrainConfig):
    if cfg.data_dir is not None:
        return data.read_dataset(cfg.data_dir)
    return data.make_scenes(cfg.scene, cfg.num_scenes)


def train(cfg: TrainConfig, checkpoint_path=None, log_path=None, scenes=None) -> Checkpoint:
    """Train a denoiser; optionally write the checkpoint and a CSV loss log.

    Raises ``FloatingPointError`` if the loss becomes non-finite.
    """
    sch = build_schedule(cfg.T, cfg.schedule)
    prepared = prepare_scenes(scenes if scenes is not None else load_training_scenes(cfg))
    for sc in prepared:
        if min(sc.labels.shape) < cfg.patch_size:
            raise ValueError(f"scene {sc.labels.shape} smaller than patch size {cfg.patch_size}")
    spec = cfg.denoiser_spec()
    params = denoiser.init_params(spec, cfg.seed, skip=np.sqrt(1.0 - sch.alpha_bar))
    adam = AdamState.zeros(spec.num_params(), lr0=cfg.lr0, total_steps=cfg.iterations)
    rng = np.random.default_rng([cfg.seed, 1])

    with contextlib.ExitStack() as stack:
        logf = stack.enter_context(open(log_path, "w")) if log_path is not None else None
        if logf:
            logf.write("iter,loss,lr\n")
        for it in range(cfg.iterations):
            x0, cond, e_sam = sample_batch(rng, prepared, cfg)
            t = sample_timesteps(rng, cfg.T, cfg.batch_size)
            eps = rng.standard_normal(x0.shape)
            x_t = diffusion.forward_jump(x0, e_sam, sch, t, eps)
            target = diffusion.loss_target(e_sam, eps, sch, t)
            loss, grad = denoiser.mse_loss_and_grad(
                params, x_t.astype(np.float32), t, cond.astype(np.float32), target.astype(np.float32)
            )
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss {loss} at iteration {it}")
            lr = denoiser.adam_step(adam, params, grad)
            if logf:
                logf.write(f"{it},{loss:.8g},{lr:.8g}\n")
            if it % 1000 == 0:
                log.info("iter %d loss %.5f lr %.3g", it, loss, lr)

    ckpt = Checkpoint(params, adam, cfg.T, cfg.schedule, 0.008)
    if checkpoint_path is not None:
        denoiser.save_checkpoint(checkpoint_path, ckpt)
    return ckpt


def restore(ckpt: Checkpoint, lr: np.ndarray, seed: int,
            opts: diffusion.SamplerOptions | None = None) -> np.ndarray:
    """Super-resolve a uint8 LR image ``(3, h, w)``; returns a float image in unit range.

    There is deliberately no mask argument: inference uses only the model.
    """
    if isinstance(ckpt, (str, Path)):
        ckpt = denoiser.load_checkpoint(ckpt)
    lr = np.asarray(lr)
    if lr.ndim != 3 or lr.shape[0] != ckpt.params.spec.cond_channels:
        raise ValueError(f"LR image shape {lr.shape} does not match the checkpoint")
    sch = build_schedule(ckpt.T, ckpt.kind, ckpt.s)
    cond = data.upsample_bilinear(data.to_unit(lr))
    opts = replace(opts, seed=seed) if opts is not None else diffusion.SamplerOptions(seed=seed)
    x0 = diffusion.reverse_sample(denoiser.as_callable(ckpt.params), cond, sch, opts)
    return cond + 2.0 * x0
