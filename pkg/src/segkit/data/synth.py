"""Seeded synthetic crescent dataset standing in for cardiac MRI slices.

Each sample is a textured background with one bright crescent (a disk minus
an overlapping offset disk). The crescent outline is stored as a polygon
contour file and the mask is that polygon's raster, so loading the files
back reproduces the mask exactly.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from ..metrics import rasterize
from .io import Manifest, ManifestEntry, ensure_dir, write_contour, write_image
from .transforms import assign_splits

MAX_TRIES = 200


def _circle_intersections(r1: float, d: float, r2: float) -> Tuple[float, float]:
    """Angles on the outer circle (center origin) where it meets the circle at (d, 0) of radius r2."""
    cos_t = (d * d + r1 * r1 - r2 * r2) / (2 * d * r1)
    t = math.acos(max(-1.0, min(1.0, cos_t)))
    return t, -t


def crescent_polygon(cx, cy, r1, r2, offset, theta, step: float = 0.5) -> np.ndarray:
    """Vertices of disk(c, r1) minus disk(c + offset*(cos θ, sin θ), r2).

    The two circles must cross (``|r1 - r2| < offset < r1 + r2``) so the
    difference is a single simply connected region.
    """
    t_pos, _ = _circle_intersections(r1, offset, r2)
    # outer arc: angles outside (-t_pos, t_pos), traversed counterclockwise
    outer_span = 2 * math.pi - 2 * t_pos
    n_outer = max(int(outer_span * r1 / step), 8)
    outer = np.linspace(t_pos, 2 * math.pi - t_pos, n_outer)
    ox, oy = r1 * np.cos(outer), r1 * np.sin(outer)
    # inner arc: the part of the offset circle lying inside the outer disk, traversed back
    p = np.array([r1 * math.cos(t_pos), r1 * math.sin(t_pos)])
    phi_top = math.atan2(p[1], p[0] - offset)
    phi_bot = -phi_top
    inner_span = 2 * math.pi - 2 * phi_top if phi_top > 0 else -2 * phi_top
    n_inner = max(int(abs(inner_span) * r2 / step), 8)
    inner = np.linspace(phi_bot, phi_bot - (2 * math.pi - 2 * phi_top), n_inner)[1:-1]
    ix, iy = offset + r2 * np.cos(inner), r2 * np.sin(inner)
    xs = np.concatenate([ox, ix])
    ys = np.concatenate([oy, iy])
    c, s = math.cos(theta), math.sin(theta)
    pts = np.stack([cx + c * xs - s * ys, cy + s * xs + c * ys], axis=1)
    return np.round(pts, 4)


def _draw_crescent(rng: np.random.Generator, size: int, ratio_range: Tuple[float, float]):
    lo, hi = ratio_range
    area_target = rng.uniform(lo, hi) * size * size
    r1 = math.sqrt(area_target / math.pi / rng.uniform(0.35, 0.7))
    r2 = r1 * rng.uniform(0.7, 1.0)
    offset = rng.uniform(abs(r1 - r2) + 0.25 * r2, r1 * 0.9 + 0.1 * r2)
    margin = r1 + 2
    if 2 * margin >= size:
        return None
    cx, cy = rng.uniform(margin, size - margin, size=2)
    theta = rng.uniform(0, 2 * math.pi)
    poly = crescent_polygon(cx, cy, r1, r2, offset, theta)
    mask = rasterize(poly, size, size)
    ratio = mask.mean()
    if not lo <= ratio <= hi:
        return None
    return poly, mask


def render_image(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Smooth textured background, a brighter crescent with a blurred edge, and pixel noise."""
    size = mask.shape
    texture = ndimage.gaussian_filter(rng.normal(size=size), 3.0)
    texture = texture / (np.abs(texture).max() + 1e-12)
    background = 0.25 + 0.08 * texture
    contrast = rng.uniform(0.35, 0.55)
    edge = ndimage.gaussian_filter(mask.astype(float), 0.7)
    image = background + contrast * edge + rng.normal(0.0, 0.03, size=size)
    return np.clip(image, 0.0, 1.0)


def synth_sample(rng: np.random.Generator, size: int, ratio_range: Tuple[float, float]):
    """Return ``(image, mask, polygon)`` for one crescent whose area ratio lies in ``ratio_range``."""
    for _ in range(MAX_TRIES):
        drawn = _draw_crescent(rng, size, ratio_range)
        if drawn is not None:
            poly, mask = drawn
            return render_image(mask, rng), mask, poly
    raise ValueError(f"could not place a crescent with area ratio in {ratio_range} on a {size}x{size} image")


def check_ratio_range(size: int, ratio_range: Tuple[float, float]) -> None:
    lo, hi = ratio_range
    if not 0.0 < lo <= hi < 1.0:
        raise ValueError(f"ratio range must satisfy 0 < lo <= hi < 1, got {ratio_range}")
    # a crescent needs a few pixels to exist and must fit inside the frame
    if hi * size * size < 4:
        raise ValueError(f"ratio range {ratio_range} leaves fewer than 4 foreground pixels on {size}x{size}")
    if lo > 0.35:
        raise ValueError(f"ratio range {ratio_range} is too large for a crescent inside the frame")


def synth_dataset(
    n: int,
    out_dir,
    image_size: int = 64,
    ratio_range: Tuple[float, float] = (0.01, 0.08),
    seed: int = 0,
    slices_per_patient: int = 5,
    image_format: str = "pgm",
) -> Manifest:
    """Write ``n`` samples plus ``manifest.json`` under ``out_dir`` and return the manifest.

    Samples are grouped into synthetic patients of ``slices_per_patient``
    slices, alternating ED / ES phases, and split by patient.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    check_ratio_range(image_size, ratio_range)
    out = ensure_dir(out_dir)
    ensure_dir(out / "images")
    ensure_dir(out / "contours")
    rng = np.random.default_rng(seed)
    patient_ids = [f"P{i // slices_per_patient:03d}" for i in range(n)]
    splits = assign_splits(patient_ids, np.random.default_rng([seed, 1]))
    entries: List[ManifestEntry] = []
    for i in range(n):
        image, _, poly = synth_sample(rng, image_size, ratio_range)
        stem = f"s{i:04d}"
        img_rel = f"images/{stem}.{image_format}"
        con_rel = f"contours/{stem}.txt"
        write_image(out / img_rel, image)
        write_contour(out / con_rel, poly)
        entries.append(
            ManifestEntry(
                image=img_rel,
                contour=con_rel,
                patient_id=patient_ids[i],
                slice_id=f"{i % slices_per_patient:02d}",
                phase="ED" if i % 2 == 0 else "ES",
                contour_kind="endo",
                split=splits[patient_ids[i]],
            )
        )
    manifest = Manifest(entries, Path(out))
    manifest.save(out / "manifest.json")
    return manifest
