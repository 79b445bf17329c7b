"""Padding, geometric augmentation, oversampling and patient-level splits."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .io import Manifest, ManifestEntry, SegSample


def pad_amounts(h: int, w: int, multiple: int) -> Tuple[int, int, int, int]:
    """(top, bottom, left, right) zero padding bringing both extents to a multiple; odd remainders go bottom/right."""
    dh = (-h) % multiple
    dw = (-w) % multiple
    return dh // 2, dh - dh // 2, dw // 2, dw - dw // 2


def pad_array(a: np.ndarray, pad: Tuple[int, int, int, int]) -> np.ndarray:
    top, bottom, left, right = pad
    return np.pad(a, ((top, bottom), (left, right)))


def crop_array(a: np.ndarray, pad: Tuple[int, int, int, int]) -> np.ndarray:
    top, bottom, left, right = pad
    h, w = a.shape[-2:]
    return a[..., top : h - bottom, left : w - right]


def pad_to_multiple(sample: SegSample, multiple: int = 16) -> SegSample:
    """Zero-pad image and mask so both extents divide ``multiple``; the padding is kept in ``meta.pad``."""
    pad = pad_amounts(*sample.image.shape, multiple)
    prev = sample.meta.pad
    meta = replace(sample.meta, pad=tuple(p + q for p, q in zip(prev, pad)))
    return SegSample(pad_array(sample.image, pad), pad_array(sample.mask, pad), meta)


def crop(sample: SegSample) -> SegSample:
    """Undo :func:`pad_to_multiple`."""
    pad = sample.meta.pad
    meta = replace(sample.meta, pad=(0, 0, 0, 0))
    return SegSample(crop_array(sample.image, pad), crop_array(sample.mask, pad), meta)


def rotate_image(image: np.ndarray, angle: float) -> np.ndarray:
    """Bilinear rotation about the image center; uncovered pixels become 0."""
    return ndimage.rotate(image, angle, reshape=False, order=1, mode="constant", cval=0.0)


def rotate_mask(mask: np.ndarray, angle: float) -> np.ndarray:
    """Nearest-neighbour rotation about the image center; stays binary."""
    out = ndimage.rotate(mask.astype(np.uint8), angle, reshape=False, order=0, mode="constant", cval=0)
    return out.astype(bool)


def augment(
    sample: SegSample,
    rng: np.random.Generator,
    angle: Optional[float] = None,
    hflip: Optional[bool] = None,
    vflip: Optional[bool] = None,
) -> SegSample:
    """Random horizontal/vertical flips (p = 0.5 each) and a rotation uniform in [-180, 180] degrees.

    The same geometric transform is applied to image and mask. Any of the
    three draws can be forced by passing it explicitly.
    """
    draw_h, draw_v, draw_angle = rng.random() < 0.5, rng.random() < 0.5, rng.uniform(-180.0, 180.0)
    hflip = draw_h if hflip is None else hflip
    vflip = draw_v if vflip is None else vflip
    angle = draw_angle if angle is None else angle
    image, mask = sample.image, sample.mask
    if hflip:
        image, mask = image[:, ::-1], mask[:, ::-1]
    if vflip:
        image, mask = image[::-1, :], mask[::-1, :]
    if angle % 360.0 != 0.0:
        image, mask = rotate_image(image, angle), rotate_mask(mask, angle)
    return SegSample(np.ascontiguousarray(image), np.ascontiguousarray(mask), sample.meta)


def oversample(
    manifest: Manifest,
    ratio_of: Callable[[ManifestEntry], float],
    area_threshold: float = 0.01,
    factor: int = 2,
) -> Manifest:
    """Repeat every train entry whose foreground ratio is below ``area_threshold`` ``factor`` times in total.

    ``ratio_of`` maps an entry to its mask's foreground ratio. Entries of the
    val and test splits are left alone.
    """
    if factor < 1:
        raise ValueError(f"oversampling factor must be >= 1, got {factor}")
    out: List[ManifestEntry] = []
    for e in manifest.entries:
        out.append(e)
        if e.split == "train" and ratio_of(e) < area_threshold:
            out.extend([e] * (factor - 1))
    return manifest.with_entries(out)


def oversample_samples(samples: Sequence[SegSample], area_threshold: float = 0.01, factor: int = 2) -> List[SegSample]:
    """In-memory counterpart of :func:`oversample` for already loaded training samples."""
    if factor < 1:
        raise ValueError(f"oversampling factor must be >= 1, got {factor}")
    out = []
    for s in samples:
        reps = factor if s.mask.mean() < area_threshold else 1
        out.extend([s] * reps)
    return out


def assign_splits(
    patient_ids: Sequence[str],
    rng: np.random.Generator,
    test_fraction: float = 0.25,
    val_fraction: float = 0.25,
) -> Dict[str, str]:
    """Assign each distinct patient to train, val or test.

    ``test_fraction`` of patients go to test (3:1 train:test by default);
    ``val_fraction`` of the remaining ones go to val (12:4 by default).
    """
    patients = sorted(set(patient_ids))
    order = [patients[i] for i in rng.permutation(len(patients))]
    n_test = int(math.floor(len(order) * test_fraction + 0.5))
    rest = order[n_test:]
    n_val = int(math.floor(len(rest) * val_fraction + 0.5))
    split = {p: "test" for p in order[:n_test]}
    split.update({p: "val" for p in rest[:n_val]})
    split.update({p: "train" for p in rest[n_val:]})
    return split
