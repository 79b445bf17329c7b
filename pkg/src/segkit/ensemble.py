"""Fusing probability maps from several models into one mask."""

from __future__ import annotations

from typing import Sequence

import numpy as np

MODES = ("majority", "avgprob")


def _stack(maps: Sequence[np.ndarray]) -> np.ndarray:
    maps = [np.asarray(m, dtype=float) for m in maps]
    if len(maps) < 2:
        raise ValueError(f"an ensemble needs at least 2 members, got {len(maps)}")
    shape = maps[0].shape
    for i, m in enumerate(maps[1:], start=1):
        if m.shape != shape:
            raise ValueError(f"member {i} has shape {m.shape}, expected {shape}")
    return np.stack(maps)


def majority_vote(maps: Sequence[np.ndarray], threshold: float = 0.5) -> np.ndarray:
    """Foreground where strictly more than half of the members exceed ``threshold``.

    With an even number of members an exact split goes to background.
    """
    stack = _stack(maps)
    votes = (stack > threshold).sum(axis=0)
    return 2 * votes > len(stack)


def average_probability(maps: Sequence[np.ndarray], threshold: float = 0.5) -> np.ndarray:
    """Foreground where the mean member probability is strictly above ``threshold``."""
    stack = _stack(maps)
    # sort along the member axis so the sum is independent of member order
    return np.sort(stack, axis=0).mean(axis=0) > threshold


def fuse(maps: Sequence[np.ndarray], mode: str, threshold: float = 0.5) -> np.ndarray:
    if mode == "majority":
        return majority_vote(maps, threshold)
    if mode == "avgprob":
        return average_probability(maps, threshold)
    raise ValueError(f"unknown ensemble mode {mode!r}; expected one of {MODES}")
