"""Synthetic multi-texture scenes and the residual representation.

A scene is a Voronoi-like partition of the HR grid where every region is
filled with its own base colour plus an oriented sinusoidal grating. The LR
image is the 4x box-filter downsample of HR. Byte images are uint8
``(3, h, w)``; the diffusion works on float images in [-1, 1].
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from smdsr import imageio

SCALE = 4


@dataclass(frozen=True)
class SceneSpec:
    h: int = 64
    w: int = 64
    regions: int = 4
    freq_range: tuple[float, float] = (0.03, 0.11)  # cycles per HR pixel
    amp_range: tuple[float, float] = (25.0, 60.0)
    base_range: tuple[float, float] = (100.0, 155.0)  # per-channel region base colour
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.regions < 1:
            raise ValueError("a scene needs at least one region")
        if self.h % SCALE or self.w % SCALE or self.h < SCALE or self.w < SCALE:
            raise ValueError(f"scene size must be a positive multiple of {SCALE}")
        if self.regions > self.h * self.w:
            raise ValueError("more regions than pixels")


def grow_regions(h: int, w: int, seeds: np.ndarray) -> np.ndarray:
    """Partition the grid by growing 4-connected regions from seed pixels.

    Pixels are claimed in order of Euclidean distance to the seed that
    reaches them, so regions approximate Voronoi cells and each one is
    4-connected by construction.
    """
    labels = np.full((h, w), -1, dtype=np.int32)
    heap = [(0.0, i, int(y), int(x)) for i, (y, x) in enumerate(seeds)]
    heapq.heapify(heap)
    while heap:
        _, i, y, x = heapq.heappop(heap)
        if labels[y, x] >= 0:
            continue
        labels[y, x] = i
        sy, sx = seeds[i]
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and labels[ny, nx] < 0:
                d = float((ny - sy) ** 2 + (nx - sx) ** 2)
                heapq.heappush(heap, (d, i, ny, nx))
    return labels


def box_downsample(img: np.ndarray, factor: int = SCALE) -> np.ndarray:
    """Mean over non-overlapping ``factor x factor`` blocks of a ``(C, H, W)`` image."""
    c, h, w = img.shape
    if h % factor or w % factor:
        raise ValueError(f"image size {h}x{w} not divisible by {factor}")
    return img.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def gen_synthetic(spec: SceneSpec):
    """Return ``(hr, lr, labels)``: uint8 ``(3,h,w)``, uint8 ``(3,h/4,w/4)``, uint16 ``(h,w)``."""
    rng = np.random.default_rng(spec.seed)
    h, w, K = spec.h, spec.w, spec.regions
    flat = rng.choice(h * w, size=K, replace=False)
    seeds = np.stack([flat // w, flat % w], axis=1)
    labels = grow_regions(h, w, seeds)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    hr = np.zeros((3, h, w))
    for i in range(K):
        base = rng.uniform(*spec.base_range, size=3)
        freq = rng.uniform(*spec.freq_range)
        angle = rng.uniform(0.0, np.pi)
        amp = rng.uniform(*spec.amp_range)
        tint = rng.uniform(0.5, 1.0, size=3)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave = np.sin(2.0 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
        inside = labels == i
        for ch in range(3):
            hr[ch][inside] = base[ch] + amp * tint[ch] * wave[inside]
    if spec.noise > 0:
        hr += rng.normal(0.0, spec.noise, size=hr.shape)
    hr = np.clip(np.rint(hr), 0, 255).astype(np.uint8)
    lr = np.clip(np.rint(box_downsample(hr.astype(np.float64))), 0, 255).astype(np.uint8)
    return hr, lr, labels.astype(np.uint16)


@lru_cache(maxsize=32)
def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    # half-pixel centres, edge samples clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), i0] += 1.0 - frac
    m[np.arange(n_out), i1] += frac
    m.setflags(write=False)
    return m


def upsample_bilinear(img: np.ndarray, factor: int = SCALE) -> np.ndarray:
    """Bilinear upsampling of ``(C, h, w)`` to ``(C, factor*h, factor*w)`` in float64."""
    img = np.asarray(img, dtype=np.float64)
    _, h, w = img.shape
    mh = _interp_matrix(h * factor, h)
    mw = _interp_matrix(w * factor, w)
    return np.einsum("Hh,chw,Ww->cHW", mh, img, mw, optimize=True)


def to_unit(img: np.ndarray) -> np.ndarray:
    """Byte range [0, 255] to [-1, 1]."""
    return np.asarray(img, dtype=np.float64) / 127.5 - 1.0


def to_byte(img: np.ndarray) -> np.ndarray:
    """[-1, 1] to rounded, clipped uint8."""
    return np.clip(np.rint((np.asarray(img) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def make_residual(hr: np.ndarray, lr: np.ndarray) -> np.ndarray:
    """Diffusion target x_0 = (HR - upsample(LR)) / 2 in unit range."""
    hr = np.asarray(hr)
    lr = np.asarray(lr)
    if hr.shape[0] != lr.shape[0] or hr.shape[1:] != (lr.shape[1] * SCALE, lr.shape[2] * SCALE):
        raise ValueError(f"HR {hr.shape} is not {SCALE}x LR {lr.shape}")
    return (to_unit(hr) - upsample_bilinear(to_unit(lr))) / 2.0


def residual_to_image(lr: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Inverse of :func:`make_residual`, returning a float image in unit range."""
    return upsample_bilinear(to_unit(lr)) + 2.0 * x0


def write_dataset(directory, spec: SceneSpec, count: int) -> list[Path]:
    """Write ``count`` scenes (seeds ``spec.seed + i``) as PPM/PGM triples."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stems = []
    for i in range(count):
        hr, lr, labels = gen_synthetic(replace(spec, seed=spec.seed + i))
        stem = directory / f"scene_{i:04d}"
        imageio.write_netpbm(f"{stem}_hr.ppm", hr)
        imageio.write_netpbm(f"{stem}_lr.ppm", lr)
        imageio.write_label_map(f"{stem}_labels.pgm", labels)
        stems.append(stem)
    return stems


def read_dataset(directory):
    """Load every ``scene_*`` triple in ``directory``, sorted by name."""
    directory = Path(directory)
    scenes = []
    for hr_path in sorted(directory.glob("scene_*_hr.ppm")):
        stem = str(hr_path)[: -len("_hr.ppm")]
        scenes.append((
            imageio.read_netpbm(hr_path),
            imageio.read_netpbm(f"{stem}_lr.ppm"),
            imageio.read_label_map(f"{stem}_labels.pgm"),
        ))
    if not scenes:
        raise FileNotFoundError(f"no scene_*_hr.ppm files in {directory}")
    return scenes


def make_scenes(spec: SceneSpec, count: int):
    return [gen_synthetic(replace(spec, seed=spec.seed + i)) for i in range(count)]
