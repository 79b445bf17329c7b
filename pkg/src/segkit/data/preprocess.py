"""Model-input preparation shared by training, evaluation and the estimator API."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .clahe import clahe
from .io import SegSample
from .transforms import pad_to_multiple


@dataclass
class DataConfig:
    """Preprocessing and augmentation switches.

    CLAHE is part of preprocessing and therefore also applied at evaluation;
    flips, rotation and oversampling only affect training batches.
    """

    clahe: bool = True
    clahe_clip: float = 2.0
    clahe_tiles: Tuple[int, int] = (8, 8)
    augment: bool = True
    flips: bool = True
    rotation: bool = True
    oversample_factor: int = 2
    oversample_threshold: float = 0.01

    def __post_init__(self):
        self.clahe_tiles = tuple(int(t) for t in self.clahe_tiles)
        if len(self.clahe_tiles) != 2:
            raise ValueError("clahe_tiles needs two entries")
        if self.clahe_clip < 1:
            raise ValueError("clahe_clip must be >= 1")
        if self.oversample_factor < 1:
            raise ValueError("oversample_factor must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clahe_tiles"] = list(self.clahe_tiles)
        return d


def preprocess_image(image: np.ndarray, cfg: DataConfig) -> np.ndarray:
    if cfg.clahe:
        return clahe(image, cfg.clahe_clip, cfg.clahe_tiles)
    return np.asarray(image, dtype=np.float64)


def prepare_samples(samples: Sequence[SegSample], cfg: DataConfig, multiple: int) -> List[SegSample]:
    """Apply CLAHE and pad every sample to a multiple of ``multiple``."""
    out = []
    for s in samples:
        pre = SegSample(preprocess_image(s.image, cfg), s.mask, s.meta)
        out.append(pad_to_multiple(pre, multiple))
    return out


def stack_batch(samples: Sequence[SegSample], dtype=np.float32) -> Tuple[np.ndarray, np.ndarray]:
    """(N, 1, H, W) image and mask arrays from equally sized samples."""
    images = np.stack([s.image for s in samples])[:, None].astype(dtype)
    masks = np.stack([s.mask for s in samples])[:, None].astype(dtype)
    return images, masks
