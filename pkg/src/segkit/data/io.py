"""Image, contour and manifest files."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from ..metrics import rasterize

MANIFEST_FORMAT = "segkit-manifest-1"
SPLITS = ("train", "val", "test")
PHASES = ("ED", "ES", "unknown")
CONTOUR_KINDS = ("endo", "epi")


class DataError(ValueError):
    pass


@dataclass
class SampleMeta:
    patient_id: str
    slice_id: str
    phase: str = "unknown"
    contour_kind: str = "endo"
    pixel_spacing: Tuple[float, float] = (1.0, 1.0)
    pad: Tuple[int, int, int, int] = (0, 0, 0, 0)  # top, bottom, left, right

    def __post_init__(self):
        if self.phase not in PHASES:
            raise DataError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.contour_kind not in CONTOUR_KINDS:
            raise DataError(f"contour kind must be one of {CONTOUR_KINDS}, got {self.contour_kind!r}")
        self.pixel_spacing = tuple(float(s) for s in self.pixel_spacing)
        if min(self.pixel_spacing) <= 0:
            raise DataError("pixel spacing must be positive")
        self.pad = tuple(int(v) for v in self.pad)


@dataclass
class SegSample:
    """Grayscale image in [0, 1], boolean mask of the same shape, and metadata."""

    image: np.ndarray
    mask: np.ndarray
    meta: SampleMeta

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise DataError(f"image {self.image.shape} and mask {self.mask.shape} differ in shape")


@dataclass
class ManifestEntry:
    image: str
    contour: str
    patient_id: str
    slice_id: str
    phase: str = "unknown"
    contour_kind: str = "endo"
    pixel_spacing: Tuple[float, float] = (1.0, 1.0)
    split: str = "train"

    def meta(self) -> SampleMeta:
        return SampleMeta(self.patient_id, self.slice_id, self.phase, self.contour_kind, tuple(self.pixel_spacing))


@dataclass
class Manifest:
    """List of samples with split tags; paths are relative to ``root``."""

    entries: List[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")

    def split(self, name: str) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def patients(self, split: str) -> set:
        return {e.patient_id for e in self.entries if e.split == split}

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def counts(self) -> dict:
        return {s: len(self.split(s)) for s in SPLITS}

    def to_json(self) -> str:
        doc = {"format": MANIFEST_FORMAT, "samples": [asdict(e) for e in self.entries]}
        for s in doc["samples"]:
            s["pixel_spacing"] = list(s["pixel_spacing"])
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: cannot read manifest ({exc})") from exc
        if doc.get("format") != MANIFEST_FORMAT:
            raise DataError(f"{path}: unsupported manifest format {doc.get('format')!r}")
        entries = []
        for i, s in enumerate(doc.get("samples", [])):
            try:
                e = ManifestEntry(**{**s, "pixel_spacing": tuple(s.get("pixel_spacing", (1.0, 1.0)))})
            except TypeError as exc:
                raise DataError(f"{path}: sample {i}: {exc}") from exc
            if e.split not in SPLITS:
                raise DataError(f"{path}: sample {i}: unknown split {e.split!r}")
            entries.append(e)
        return cls(entries, path.parent)

    def with_entries(self, entries: Sequence[ManifestEntry]) -> "Manifest":
        return replace(self, entries=list(entries))


def read_image(path) -> np.ndarray:
    """8-bit grayscale PGM (P5) or PNG as a float array in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64)
    except OSError as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from exc
    return arr / 255.0


def write_image(path, image: np.ndarray) -> None:
    """Write a [0, 1] image as 8-bit grayscale; the format follows the suffix (.pgm or .png)."""
    arr = np.clip(np.rint(np.asarray(image, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    _save_l(path, arr)


def write_mask(path, mask: np.ndarray) -> None:
    """Binary mask as 8-bit grayscale with values {0, 255}."""
    _save_l(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    return read_image(path) > 0.5


def _save_l(path, arr: np.ndarray) -> None:
    path = Path(path)
    fmt = {".pgm": "PPM", ".png": "PNG"}.get(path.suffix.lower())
    if fmt is None:
        raise DataError(f"{path}: unsupported image suffix (use .pgm or .png)")
    Image.fromarray(arr).save(path, format=fmt)


def read_contour(path, height: Optional[int] = None, width: Optional[int] = None) -> np.ndarray:
    """Parse a text contour, one ``x y`` pair per line, into an (M, 2) array.

    When the image size is given, points more than 1 px outside
    ``[0, W) x [0, H)`` are rejected with their line number.
    """
    pts = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"{path}: cannot read contour ({exc})") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        try:
            x, y = float(parts[0]), float(parts[1])
        except (IndexError, ValueError) as exc:
            raise DataError(f"{path}:{lineno}: expected 'x y', got {line!r}") from exc
        if height is not None and width is not None:
            if not (-1.0 <= x < width + 1.0 and -1.0 <= y < height + 1.0):
                raise DataError(f"{path}:{lineno}: point ({x}, {y}) outside the {width}x{height} image")
        pts.append((x, y))
    if len(pts) < 3:
        raise DataError(f"{path}: fewer than 3 points")
    return np.array(pts, dtype=float)


def write_contour(path, points: np.ndarray) -> None:
    with open(path, "w") as fh:
        for x, y in np.asarray(points, dtype=float):
            fh.write(f"{x:.4f} {y:.4f}\n")


def load_sample(image_path, contour_path, meta: SampleMeta) -> SegSample:
    """Read an image and rasterize its contour onto the same grid."""
    image = read_image(image_path)
    h, w = image.shape
    contour = read_contour(contour_path, h, w)
    return SegSample(image, rasterize(contour, h, w), meta)


def load_entry(manifest: Manifest, entry: ManifestEntry) -> SegSample:
    return load_sample(manifest.resolve(entry.image), manifest.resolve(entry.contour), entry.meta())


def load_split(manifest: Manifest, split: str) -> List[SegSample]:
    return [load_entry(manifest, e) for e in manifest.split(split)]


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
