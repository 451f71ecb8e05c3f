"""Segmentation regions and the structurally position-encoded mask.

A segmentation is carried around as an integer label map ``(h, w)``. The
encoded mask gives every pixel the mean of a position-embedding grid over
the pixel's region, so it is constant inside each region. A segmentation
with a single region carries no structure and encodes to all zeros.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SCHEMES = ("rope", "cosine", "linear")
ROPE_BASE = 10000.0


@dataclass(frozen=True)
class RegionSet:
    """Partition of an ``h x w`` grid into ``K`` disjoint regions.

    ``index[y, x]`` is the region id in ``0..K-1``; ``labels`` are the source
    label values for each id, in ascending order.
    """

    index: np.ndarray
    labels: np.ndarray

    @property
    def K(self) -> int:
        return int(self.labels.size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.index.shape

    def sizes(self) -> np.ndarray:
        return np.bincount(self.index.ravel(), minlength=self.K)

    def regions(self) -> list[np.ndarray]:
        """Flat pixel indices of each region."""
        flat = self.index.ravel()
        order = np.argsort(flat, kind="stable")
        return np.split(order, np.cumsum(self.sizes())[:-1])


def regions_from_label_map(labels: np.ndarray) -> RegionSet:
    """One region per distinct label value; label 0 is a region like any other."""
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.size == 0:
        raise ValueError(f"label map must be a non-empty 2-D array, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > 65535:
        raise ValueError("label values must lie in 0..65535")
    values, inverse = np.unique(labels, return_inverse=True)
    index = inverse.reshape(labels.shape).astype(np.int32)
    index.setflags(write=False)
    values.setflags(write=False)
    return RegionSet(index=index, labels=values)


def label_map_from_masks(masks: np.ndarray, overlap_policy: str = "smallest") -> np.ndarray:
    """Collapse a stack of binary masks ``(K, h, w)`` into a label map.

    Mask ``i`` becomes label ``i + 1``; uncovered pixels get label 0. Where
    masks overlap, ``"smallest"`` gives the pixel to the smallest covering
    mask and ``"first"`` to the lowest-index one.
    """
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim != 3:
        raise ValueError("expected a (K, h, w) mask stack")
    if overlap_policy == "smallest":
        order = np.argsort(masks.reshape(len(masks), -1).sum(axis=1), kind="stable")
    elif overlap_policy == "first":
        order = np.arange(len(masks))
    else:
        raise ValueError(f"unknown overlap policy {overlap_policy!r}")
    labels = np.zeros(masks.shape[1:], dtype=np.uint16)
    taken = np.zeros(masks.shape[1:], dtype=bool)
    for i in order:
        claim = masks[i] & ~taken
        labels[claim] = i + 1
        taken |= claim
    return labels


@lru_cache(maxsize=64)
def _rope_grid_cached(h: int, w: int, base: float) -> np.ndarray:
    pair = np.arange(h) // 2
    theta = base ** (-2.0 * pair / h)
    angle = np.arange(w)[None, :] * theta[:, None]
    cos, sin = np.cos(angle), np.sin(angle)
    # rotating the pair (1, 1) by angle gives (cos - sin, sin + cos)
    grid = np.where((np.arange(h) % 2 == 0)[:, None], cos - sin, sin + cos)
    grid = grid[None].astype(np.float64)
    grid.setflags(write=False)
    return grid


def rope_grid(h: int, w: int, base: float = ROPE_BASE) -> np.ndarray:
    """Rotary embedding of an all-ones ``(h, w)`` tensor, shape ``(1, h, w)``.

    Columns are sequence positions and rows are embedding dimensions, with
    rows ``2i`` and ``2i+1`` forming the ``i``-th rotary pair.
    """
    if h < 2 or h % 2:
        raise ValueError(f"rope grid height must be even and >= 2, got {h}")
    if w < 1:
        raise ValueError(f"rope grid width must be >= 1, got {w}")
    return _rope_grid_cached(int(h), int(w), float(base))


def cosine_grid(h: int, w: int, base: float = ROPE_BASE) -> np.ndarray:
    """Plain sinusoidal grid, ``cos(m * theta_i)`` without the rotary pairing."""
    if h < 1 or w < 1:
        raise ValueError("grid dimensions must be positive")
    theta = base ** (-2.0 * (np.arange(h) // 2) / h)
    return np.cos(np.arange(w)[None, :] * theta[:, None])[None]


def linear_grid(h: int, w: int) -> np.ndarray:
    """Ramp from 0 at the left column to 1 at the right column."""
    if h < 1 or w < 1:
        raise ValueError("grid dimensions must be positive")
    ramp = np.arange(w) / (w - 1) if w > 1 else np.zeros(1)
    return np.broadcast_to(ramp, (1, h, w)).astype(np.float64)


def embedding_grid(h: int, w: int, scheme: str = "rope", base: float = ROPE_BASE) -> np.ndarray:
    if scheme == "rope":
        return rope_grid(h, w, base)
    if scheme == "cosine":
        return cosine_grid(h, w, base)
    if scheme == "linear":
        return linear_grid(h, w)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def encode_spe(regions: RegionSet, grid: np.ndarray) -> np.ndarray:
    """Assign each region the mean of ``grid`` over that region.

    Returns a ``(1, h, w)`` float64 map; all zeros when there is one region.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 3:
        if grid.shape[0] != 1:
            raise ValueError("embedding grid must have a single channel")
        grid = grid[0]
    if grid.shape != regions.shape:
        raise ValueError(f"grid shape {grid.shape} does not match regions {regions.shape}")
    if regions.K == 1:
        return np.zeros((1, *regions.shape))
    sums = np.bincount(regions.index.ravel(), weights=grid.ravel(), minlength=regions.K)
    means = sums / regions.sizes()
    return means[regions.index][None]


def encode_label_map(labels: np.ndarray, scheme: str = "rope", base: float = ROPE_BASE) -> np.ndarray:
    """Label map to encoded mask in one call."""
    regions = regions_from_label_map(labels)
    h, w = regions.shape
    if regions.K == 1:
        return np.zeros((1, h, w))
    return encode_spe(regions, embedding_grid(h, w, scheme, base))


def _check_rect(rect, h: int, w: int) -> tuple[int, int, int, int]:
    top, left, ch, cw = (int(v) for v in rect)
    if ch < 1 or cw < 1 or top < 0 or left < 0 or top + ch > h or left + cw > w:
        raise ValueError(f"crop rect {rect} outside a {h}x{w} image")
    return top, left, ch, cw


def crop_pair(image: np.ndarray, mask: np.ndarray, rect, scheme: str = "rope"):
    """Crop an image and its mask with the same ``(top, left, height, width)``.

    ``mask`` is either an integer label map ``(h, w)`` or an encoded mask
    ``(1, h, w)``. Returns ``(image_crop, mask_crop, spe_crop)``: label maps
    are re-encoded on the crop; an encoded mask is cropped as is. Either way
    a crop covering a single region gets an all-zero encoded mask.
    """
    image = np.asarray(image)
    mask = np.asarray(mask)
    h, w = image.shape[-2:]
    if mask.shape[-2:] != (h, w):
        raise ValueError(f"mask shape {mask.shape} does not match image {image.shape}")
    top, left, ch, cw = _check_rect(rect, h, w)
    win = (Ellipsis, slice(top, top + ch), slice(left, left + cw))
    image_crop = image[win]
    mask_crop = mask[win]
    if mask.ndim == 2:
        spe = encode_label_map(mask_crop, scheme)
    else:
        spe = np.asarray(mask_crop, dtype=np.float64)
        if np.all(spe == spe.flat[0]):
            spe = np.zeros_like(spe)
    return image_crop, mask_crop, spe
