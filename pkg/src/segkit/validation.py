"""Input checks shared by the estimator API."""

from __future__ import annotations

from typing import List, Sequence, Union

import numpy as np

ImageStack = Union[np.ndarray, Sequence[np.ndarray]]


def check_images(X: ImageStack, name: str = "X") -> List[np.ndarray]:
    """A list of finite 2-D float64 images with values in [0, 1].

    Accepts an ``(N, H, W)`` array or a sequence of 2-D arrays of any sizes.
    """
    if isinstance(X, np.ndarray):
        if X.ndim == 2:
            raise ValueError(f"{name} must be a stack of images; wrap a single image as X[None]")
        if X.ndim != 3:
            raise ValueError(f"{name} must have shape (N, H, W), got {X.shape}")
        items = list(X)
    else:
        items = list(X)
    if not items:
        raise ValueError(f"{name} is empty")
    out = []
    for i, im in enumerate(items):
        arr = np.asarray(im, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"{name}[{i}] must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}[{i}] contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"{name}[{i}] must be scaled to [0, 1], got range [{arr.min():g}, {arr.max():g}]")
        out.append(arr)
    return out


def check_masks(y: ImageStack, images: Sequence[np.ndarray], name: str = "y") -> List[np.ndarray]:
    """Boolean masks matching ``images`` one to one in count and shape; values must be 0/1."""
    items = list(y)
    if len(items) != len(images):
        raise ValueError(f"{name} has {len(items)} masks for {len(images)} images")
    out = []
    for i, (m, im) in enumerate(zip(items, images)):
        arr = np.asarray(m)
        if arr.shape != im.shape:
            raise ValueError(f"{name}[{i}] has shape {arr.shape}, image has {im.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name}[{i}] must be binary (0/1)")
        out.append(arr.astype(bool))
    return out


def stack_if_uniform(arrays: Sequence[np.ndarray]):
    """One stacked array when all shapes agree, otherwise the list unchanged."""
    if len({a.shape for a in arrays}) == 1:
        return np.stack(arrays)
    return list(arrays)
