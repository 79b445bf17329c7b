"""Segmentation losses over a probability map ``p`` and a binary mask ``g``.

All losses clamp ``p`` to ``[delta, 1 - delta]`` before use. Cross-entropy
style terms are averaged over every pixel in the batch; Dice-style terms are
computed from sums pooled over the whole batch unless ``reduction`` is
``"per_sample"``, in which case each sample is scored separately and the
results averaged.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .tensor import Tensor, as_tensor, clamp, log, power

LOSS_KINDS = ("bce", "dice", "inverted_dice", "focal", "bce_dice", "bce_dice_inv", "switching")
LARGE_FOREGROUND = "large_foreground"
SMALL_FOREGROUND = "small_foreground"


@dataclass
class LossConfig:
    kind: str = "switching"
    gamma: float = 1.0
    lam: float = 0.75
    tau: float = 0.01
    eps: float = 1e-6
    delta: float = 1e-7
    reduction: str = "pooled"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.reduction not in ("pooled", "per_sample"):
            raise ValueError(f"reduction must be 'pooled' or 'per_sample', got {self.reduction!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossValue:
    """Total loss tensor plus the float value of each term that went into it."""

    total: Tensor
    breakdown: Dict[str, object] = field(default_factory=dict)

    def item(self) -> float:
        return self.total.item()


def _check_mask(g) -> np.ndarray:
    g = np.asarray(g.data if isinstance(g, Tensor) else g)
    if g.size and not np.all((g == 0) | (g == 1)):
        raise ValueError("ground-truth mask must be binary (values 0 and 1)")
    return g


def _prepare(p, g, delta: float) -> Tuple[Tensor, np.ndarray]:
    p = as_tensor(p)
    g = _check_mask(g)
    if g.shape != p.shape:
        raise ValueError(f"prediction shape {p.shape} != mask shape {g.shape}")
    return clamp(p, delta, 1.0 - delta), g.astype(p.dtype)


def _per_sample_axes(x: Tensor):
    return tuple(range(1, x.ndim))


def bce(p, g, delta: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy over all pixels."""
    p, g = _prepare(p, g, delta)
    return -(g * log(p) + (1.0 - g) * log(1.0 - p)).mean()


def _dice_terms(p: Tensor, g: np.ndarray, eps: float, reduction: str) -> Tensor:
    if reduction == "per_sample":
        axes = _per_sample_axes(p)
        inter = (p * g).sum(axis=axes)
        denom = p.sum(axis=axes) + g.sum(axis=axes)
        return (1.0 - (2.0 * inter + eps) / (denom + eps)).mean()
    return 1.0 - (2.0 * (p * g).sum() + eps) / (p.sum() + float(g.sum()) + eps)


def dice_loss(p, g, eps: float = 1e-6, delta: float = 1e-7, reduction: str = "pooled") -> Tensor:
    """``1 - (2 Σ p g + eps) / (Σ p + Σ g + eps)``."""
    p, g = _prepare(p, g, delta)
    return _dice_terms(p, g, eps, reduction)


def inverted_dice_loss(p, g, eps: float = 1e-6, delta: float = 1e-7, reduction: str = "pooled") -> Tensor:
    """Dice loss of the background class, i.e. ``dice_loss(1 - p, 1 - g)``."""
    p, g = _prepare(p, g, delta)
    return _dice_terms(1.0 - p, 1.0 - g, eps, reduction)


def focal(p, g, gamma: float = 1.0, delta: float = 1e-7) -> Tensor:
    """Mean of ``-(1 - p_t)**gamma * log(p_t)``, with ``p_t`` the probability of the true class."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    p, g = _prepare(p, g, delta)
    pt = g * p + (1.0 - g) * (1.0 - p)
    nll = -log(pt)
    if gamma == 0:
        return nll.mean()
    return (power(1.0 - pt, gamma) * nll).mean()


def foreground_ratio(g) -> float:
    """Fraction of mask pixels that are foreground."""
    g = _check_mask(g)
    if g.size == 0:
        raise ValueError("foreground_ratio of an empty mask")
    return float(g.sum()) / g.size


def switching_weights(ratio: float, lam: float, tau: float) -> Tuple[float, float, str]:
    """Dice and inverted-Dice weights for a given foreground ratio.

    A ratio exactly equal to ``tau`` takes the small-foreground branch.
    """
    if ratio > tau:
        return lam, 1.0 - lam, LARGE_FOREGROUND
    return 1.0 - lam, lam, SMALL_FOREGROUND


def switching(
    p,
    g,
    lam: float = 0.75,
    tau: float = 0.01,
    eps: float = 1e-6,
    delta: float = 1e-7,
    reduction: str = "pooled",
) -> LossValue:
    """BCE plus a Dice / inverted-Dice blend whose weights swap on the mask's foreground ratio.

    With ratio ``r`` of the ground truth: ``r > tau`` gives
    ``bce + lam*dice + (1-lam)*inv``, otherwise ``bce + (1-lam)*dice + lam*inv``.
    The gate never depends on ``p``.
    """
    if reduction == "per_sample":
        return _switching_per_sample(p, g, lam, tau, eps, delta)
    lc = bce(p, g, delta)
    ld = dice_loss(p, g, eps, delta)
    li = inverted_dice_loss(p, g, eps, delta)
    wd, wi, branch = switching_weights(foreground_ratio(g), lam, tau)
    total = lc + wd * ld + wi * li
    return LossValue(total, {"bce": lc.item(), "dice": ld.item(), "inverted_dice": li.item(), "branch_taken": branch})


def _switching_per_sample(p, g, lam, tau, eps, delta) -> LossValue:
    pc, gc = _prepare(p, g, delta)
    axes = _per_sample_axes(pc)
    lc = bce(p, g, delta)
    inter = (pc * gc).sum(axis=axes)
    ld = 1.0 - (2.0 * inter + eps) / (pc.sum(axis=axes) + gc.sum(axis=axes) + eps)
    qc, hc = 1.0 - pc, 1.0 - gc
    li = 1.0 - (2.0 * (qc * hc).sum(axis=axes) + eps) / (qc.sum(axis=axes) + hc.sum(axis=axes) + eps)
    weights = [switching_weights(foreground_ratio(gs), lam, tau) for gs in gc]
    wd = np.array([w[0] for w in weights], dtype=pc.dtype)
    wi = np.array([w[1] for w in weights], dtype=pc.dtype)
    total = lc + (wd * ld + wi * li).mean()
    return LossValue(
        total,
        {
            "bce": lc.item(),
            "dice": float(ld.data.mean()),
            "inverted_dice": float(li.data.mean()),
            "branch_taken": tuple(w[2] for w in weights),
        },
    )


def combined(p, g, kind: str, eps: float = 1e-6, delta: float = 1e-7, reduction: str = "pooled") -> LossValue:
    """Equal-weight sums: ``bce_dice`` = BCE + Dice, ``bce_dice_inv`` = BCE + Dice + inverted Dice."""
    if kind not in ("bce_dice", "bce_dice_inv"):
        raise ValueError(f"unknown combined loss {kind!r}")
    lc = bce(p, g, delta)
    ld = dice_loss(p, g, eps, delta, reduction)
    breakdown = {"bce": lc.item(), "dice": ld.item()}
    total = lc + ld
    if kind == "bce_dice_inv":
        li = inverted_dice_loss(p, g, eps, delta, reduction)
        breakdown["inverted_dice"] = li.item()
        total = total + li
    return LossValue(total, breakdown)


def compute_loss(p, g, cfg: Optional[LossConfig] = None) -> LossValue:
    """Evaluate the loss selected by ``cfg`` (switching with defaults when omitted)."""
    cfg = cfg or LossConfig()
    kind = cfg.kind
    if kind == "switching":
        return switching(p, g, cfg.lam, cfg.tau, cfg.eps, cfg.delta, cfg.reduction)
    if kind in ("bce_dice", "bce_dice_inv"):
        return combined(p, g, kind, cfg.eps, cfg.delta, cfg.reduction)
    if kind == "bce":
        t = bce(p, g, cfg.delta)
        return LossValue(t, {"bce": t.item()})
    if kind == "dice":
        t = dice_loss(p, g, cfg.eps, cfg.delta, cfg.reduction)
        return LossValue(t, {"dice": t.item()})
    if kind == "inverted_dice":
        t = inverted_dice_loss(p, g, cfg.eps, cfg.delta, cfg.reduction)
        return LossValue(t, {"inverted_dice": t.item()})
    t = focal(p, g, cfg.gamma, cfg.delta)
    return LossValue(t, {"focal": t.item()})
