"""PSNR and SSIM on the BT.601 luma channel of byte-range images."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import correlate

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = (0.01 * PEAK) ** 2
C2 = (0.03 * PEAK) ** 2


def luma(img) -> np.ndarray:
    """Y = 0.299 R + 0.587 G + 0.114 B for ``(3, h, w)``; grayscale passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 3:
        return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
    if img.ndim == 3 and img.shape[0] == 1:
        return img[0]
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (3, h, w), (1, h, w) or (h, w), got {img.shape}")


def psnr_y(a, b) -> float:
    """PSNR in dB of the luma channels; ``inf`` for identical inputs."""
    ya, yb = luma(a), luma(b)
    if ya.shape != yb.shape:
        raise ValueError(f"image shapes differ: {ya.shape} vs {yb.shape}")
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK ** 2 / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_y(a, b) -> float:
    """Mean single-scale SSIM over all fully-contained 11x11 Gaussian windows."""
    ya, yb = luma(a), luma(b)
    if ya.shape != yb.shape:
        raise ValueError(f"image shapes differ: {ya.shape} vs {yb.shape}")
    if min(ya.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    win = _gaussian_window()

    def filt(x):
        return correlate(x, win, mode="valid", method="direct")

    mu_a, mu_b = filt(ya), filt(yb)
    var_a = filt(ya * ya) - mu_a ** 2
    var_b = filt(yb * yb) - mu_b ** 2
    cov = filt(ya * yb) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)
    den = (mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))


def format_report(metrics: dict[str, float]) -> str:
    lines = []
    for key, value in metrics.items():
        text = "inf" if math.isinf(value) else f"{value:.6f}"
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"
