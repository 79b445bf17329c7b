"""Contrast limited adaptive histogram equalization."""

from __future__ import annotations

import math
from typing import Tuple

import numpy as np


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return np.round(np.linspace(0, n, tiles + 1)).astype(int)


def _tile_mapping(values: np.ndarray, bins: int, clip_limit: float) -> np.ndarray:
    hist = np.bincount(values.ravel(), minlength=bins).astype(np.float64)
    if math.isfinite(clip_limit):
        limit = clip_limit * values.size / bins
        excess = np.maximum(hist - limit, 0.0).sum()
        hist = np.minimum(hist, limit) + excess / bins
    return np.cumsum(hist) / values.size


def _interp_coords(n: int, edges: np.ndarray):
    """Lower tile index and weight of the upper tile for every pixel along one axis."""
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(n, dtype=float)
    idx = np.searchsorted(centers, pos, side="right") - 1
    lo = np.clip(idx, 0, len(centers) - 1)
    hi = np.clip(idx + 1, 0, len(centers) - 1)
    span = centers[hi] - centers[lo]
    weight = np.where(span > 0, (pos - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, np.clip(weight, 0.0, 1.0)


def clahe(image: np.ndarray, clip_limit: float = 2.0, tiles: Tuple[int, int] = (8, 8), bins: int = 256) -> np.ndarray:
    """Equalize ``image`` (values in [0, 1]) tile by tile with a clipped histogram.

    Args:
        image: 2-D array in [0, 1].
        clip_limit: Histogram ceiling as a multiple of the uniform bin height
            (tile pixels / bins); ``math.inf`` disables clipping. Must be >= 1.
        tiles: Number of tile rows and columns.
        bins: Histogram bins; pixel values are quantized to this many levels.

    Returns:
        Array of the same shape with values in [0, 1], obtained by bilinear
        interpolation between the mappings of the four nearest tile centers.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"clahe expects a 2-D image, got shape {img.shape}")
    tr, tc = tiles
    h, w = img.shape
    if tr < 1 or tc < 1 or tr > h or tc > w:
        raise ValueError(f"tile grid {tiles} does not fit a {h}x{w} image")
    if clip_limit < 1:
        raise ValueError(f"clip_limit must be >= 1, got {clip_limit}")
    q = np.clip(np.rint(img * (bins - 1)), 0, bins - 1).astype(np.int64)
    re, ce = _tile_edges(h, tr), _tile_edges(w, tc)
    maps = np.empty((tr, tc, bins))
    for i in range(tr):
        for j in range(tc):
            maps[i, j] = _tile_mapping(q[re[i] : re[i + 1], ce[j] : ce[j + 1]], bins, clip_limit)
    r0, r1, wr = _interp_coords(h, re)
    c0, c1, wc = _interp_coords(w, ce)
    wr, wc = wr[:, None], wc[None, :]
    r0, r1, c0, c1 = r0[:, None], r1[:, None], c0[None, :], c1[None, :]
    out = (
        (1 - wr) * (1 - wc) * maps[r0, c0, q]
        + (1 - wr) * wc * maps[r0, c1, q]
        + wr * (1 - wc) * maps[r1, c0, q]
        + wr * wc * maps[r1, c1, q]
    )
    return np.clip(out, 0.0, 1.0)
