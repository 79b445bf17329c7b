"""Dice coefficient, Hausdorff distance, polygon rasterization and report aggregation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

CSV_HEADER = ("patient", "slice", "phase", "contour", "dice", "hd_mm")


class UndefinedHausdorffError(ValueError):
    """Hausdorff distance requested for an empty point set."""


class EmptyRegionError(ValueError):
    """A mask has no foreground, so it has no boundary."""


def dice_coefficient(pred, target) -> float:
    """``2|P ∩ T| / (|P| + |T|)``; two empty masks score 1."""
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(target, dtype=bool)
    if p.shape != t.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {t.shape}")
    total = int(p.sum()) + int(t.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, t).sum()) / total


def boundary(mask) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour in the background.

    Pixels outside the image count as background. Returns an (M, 2) array of
    ``(x, y)`` = ``(column, row)`` coordinates in row-major order.
    """
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyRegionError("mask has no foreground region")
    padded = np.pad(m, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    rows, cols = np.nonzero(m & ~interior)
    return np.stack([cols, rows], axis=1).astype(float)


def _directed_sq(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> float:
    worst = 0.0
    for start in range(0, len(a), chunk):
        block = a[start : start + chunk]
        dx = block[:, None, 0] - b[None, :, 0]
        dy = block[:, None, 1] - b[None, :, 1]
        worst = max(worst, float((dx * dx + dy * dy).min(axis=1).max()))
    return worst


def hausdorff(a, b, spacing: Tuple[float, float] = (1.0, 1.0)) -> float:
    """Symmetric Hausdorff distance between two point sets, in millimetres.

    Args:
        a, b: (M, 2) arrays of ``(x, y)`` pixel coordinates.
        spacing: ``(row_mm, col_mm)`` pixel size; x is scaled by the column
            spacing and y by the row spacing.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise UndefinedHausdorffError("Hausdorff distance is undefined for an empty point set")
    row_mm, col_mm = spacing
    scale = np.array([col_mm, row_mm], dtype=float)
    a = a * scale
    b = b * scale
    return math.sqrt(max(_directed_sq(a, b), _directed_sq(b, a)))


def mask_hausdorff(pred, target, spacing: Tuple[float, float] = (1.0, 1.0)) -> float:
    """Hausdorff distance between the boundary pixel sets of two masks."""
    try:
        return hausdorff(boundary(pred), boundary(target), spacing)
    except EmptyRegionError as exc:
        raise UndefinedHausdorffError(str(exc)) from exc


def rasterize(contour, height: int, width: int) -> np.ndarray:
    """Fill a closed polygon on a pixel grid.

    Pixel ``(i, j)`` has its center at ``(x=j, y=i)`` and is foreground when
    that center lies inside the polygon under the even-odd rule. Centers that
    lie exactly on an edge count as inside.
    """
    pts = np.asarray(contour, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        raise ValueError(f"contour has fewer than 3 points ({len(pts)})")
    mask = np.zeros((height, width), dtype=bool)
    x0 = max(int(math.floor(pts[:, 0].min())), 0)
    x1 = min(int(math.ceil(pts[:, 0].max())), width - 1)
    y0 = max(int(math.floor(pts[:, 1].min())), 0)
    y1 = min(int(math.ceil(pts[:, 1].max())), height - 1)
    if x0 > x1 or y0 > y1:
        return mask
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1].astype(float)
    inside = np.zeros(xs.shape, dtype=bool)
    on_edge = np.zeros(xs.shape, dtype=bool)
    nxt = np.roll(pts, -1, axis=0)
    for (ax, ay), (bx, by) in zip(pts, nxt):
        crosses = (ay > ys) != (by > ys)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = ax + (ys - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (xs < x_at)
        # on-segment test: collinear and within the segment's bounding box
        cross = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        within = (
            (xs >= min(ax, bx) - 1e-9)
            & (xs <= max(ax, bx) + 1e-9)
            & (ys >= min(ay, by) - 1e-9)
            & (ys <= max(ay, by) + 1e-9)
        )
        on_edge |= within & (np.abs(cross) <= 1e-9 * max(1.0, abs(bx - ax) + abs(by - ay)))
    mask[y0 : y1 + 1, x0 : x1 + 1] = inside | on_edge
    return mask


@dataclass
class SampleRecord:
    patient: str
    slice: str
    phase: str
    contour: str
    dice: float
    hd_mm: Optional[float]


@dataclass
class GroupStats:
    count: int
    dice_mean: float
    dice_std: float
    hd_count: int
    hd_mean: Optional[float]
    hd_std: Optional[float]


@dataclass
class MetricsReport:
    """Per-sample records plus ``(group, contour) -> GroupStats`` aggregates.

    Groups are ``overall``, ``ED``, ``ES`` and, when present, ``unknown``.
    Samples whose Hausdorff distance is undefined carry ``hd_mm=None``; they
    are excluded from the HD statistics and tallied in ``undefined_hd``.
    """

    records: List[SampleRecord]
    groups: Dict[Tuple[str, str], GroupStats] = field(default_factory=dict)
    undefined_hd: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.records:
            hd = "" if r.hd_mm is None else f"{r.hd_mm:.6f}"
            writer.writerow([r.patient, r.slice, r.phase, r.contour, f"{r.dice:.6f}", hd])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def table(self) -> str:
        """Text table with one row per contour kind and Overall / ED / ES columns of mean (std)."""
        contours = sorted({c for _, c in self.groups})
        phases = [g for g in ("overall", "ED", "ES", "unknown") if any((g, c) in self.groups for c in contours)]
        head = ["contour"] + [f"{p} Dice" for p in phases] + [f"{p} HD(mm)" for p in phases]
        rows = [head]
        for c in contours:
            row = [c]
            for p in phases:
                s = self.groups.get((p, c))
                row.append("-" if s is None else f"{s.dice_mean:.4f} ({s.dice_std:.4f})")
            for p in phases:
                s = self.groups.get((p, c))
                row.append("-" if s is None or s.hd_mean is None else f"{s.hd_mean:.2f} ({s.hd_std:.2f})")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        lines.append(f"undefined HD samples: {self.undefined_hd}")
        return "\n".join(lines)


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def aggregate(records: Iterable[SampleRecord]) -> MetricsReport:
    """Group records by phase and contour kind; standard deviations use divisor n."""
    records = list(records)
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    buckets: Dict[Tuple[str, str], List[SampleRecord]] = {}
    for r in records:
        buckets.setdefault(("overall", r.contour), []).append(r)
        buckets.setdefault((r.phase, r.contour), []).append(r)
    groups = {}
    for key, rs in buckets.items():
        dm, ds = _mean_std([r.dice for r in rs])
        hds = [r.hd_mm for r in rs if r.hd_mm is not None]
        hm, hs = _mean_std(hds) if hds else (None, None)
        groups[key] = GroupStats(len(rs), dm, ds, len(hds), hm, hs)
    undefined = sum(r.hd_mm is None for r in records)
    return MetricsReport(records, groups, undefined)


def record_to_dict(r: SampleRecord) -> dict:
    return asdict(r)
