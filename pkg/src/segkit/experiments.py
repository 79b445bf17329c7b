"""Manifest-level drivers used by the command line: training, loss comparison, ensembling."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data.io import Manifest, load_split, write_mask
from .ensemble import fuse
from .losses import LOSS_KINDS, LossConfig
from .metrics import MetricsReport, aggregate
from .trainer import TrainConfig, TrainResult, Trainer, load_model, predict_proba, score_sample


def train_from_manifest(cfg: TrainConfig, manifest: Manifest, out_dir=None, resume=None) -> TrainResult:
    """Train on the manifest's train split, validating on its val split."""
    trainer = Trainer(cfg)
    if resume is not None:
        trainer.restore(resume)
    return trainer.fit(load_split(manifest, "train"), load_split(manifest, "val"), out_dir)


@dataclass
class LossRow:
    loss: str
    dices: List[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.dices))

    @property
    def std(self) -> float:
        return float(np.std(self.dices))

    @property
    def median(self) -> float:
        return float(np.median(self.dices))


def loss_config_for(base: LossConfig, kind: str) -> LossConfig:
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss {kind!r}; expected one of {LOSS_KINDS}")
    return replace(base, kind=kind)


def compare_losses(cfg: TrainConfig, manifest: Manifest, losses: Sequence[str], seeds: Sequence[int], out_dir=None) -> List[LossRow]:
    """Train one model per (loss, seed) with everything else fixed; collect best validation Dice."""
    for kind in losses:
        loss_config_for(cfg.loss, kind)
    train = load_split(manifest, "train")
    val = load_split(manifest, "val")
    rows = []
    for kind in losses:
        dices = []
        for seed in seeds:
            run_cfg = replace(cfg, loss=loss_config_for(cfg.loss, kind), seed=int(seed))
            run_dir = None if out_dir is None else Path(out_dir) / kind / f"seed{seed}"
            result = Trainer(run_cfg).fit(train, val, run_dir)
            dices.append(result.best_val_dice)
        rows.append(LossRow(kind, dices))
    return rows


def loss_table(rows: Sequence[LossRow]) -> str:
    """Validation Dice per loss as ``mean (std)`` plus the median, one row per loss."""
    head = ("loss", "runs", "val Dice mean (std)", "median")
    body = [(r.loss, str(len(r.dices)), f"{r.mean:.4f} ({r.std:.4f})", f"{r.median:.4f}") for r in rows]
    widths = [max(len(x[i]) for x in [head] + body) for i in range(4)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in [head] + body)


def loss_csv(rows: Sequence[LossRow], seeds: Sequence[int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["loss", "seed", "best_val_dice"])
    for r in rows:
        for seed, d in zip(seeds, r.dices):
            w.writerow([r.loss, seed, f"{d:.9f}"])
    return buf.getvalue()


def ensemble_predict(checkpoints: Sequence, manifest: Manifest, split: str, mode: str, out_dir=None, spacing=None) -> MetricsReport:
    """Fuse the members' probability maps per sample and score the fused masks."""
    samples = load_split(manifest, split)
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    member_probs = []
    threshold = 0.5
    for path in checkpoints:
        model, cfg, _ = load_model(path)
        member_probs.append(predict_proba(model, [s.image for s in samples], cfg.data))
        threshold = cfg.threshold
    records = []
    masks_dir = None
    if out_dir is not None:
        masks_dir = Path(out_dir) / "masks"
        masks_dir.mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(samples):
        fused = fuse([probs[i] for probs in member_probs], mode, threshold)
        records.append(score_sample(fused.astype(float), sample, 0.5, spacing))
        if masks_dir is not None:
            m = sample.meta
            write_mask(masks_dir / f"{i:04d}_{m.patient_id}_{m.slice_id}_{m.contour_kind}.pgm", fused)
    return aggregate(records)
