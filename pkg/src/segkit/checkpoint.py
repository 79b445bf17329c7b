"""Flat checkpoint container: JSON header line followed by raw little-endian arrays.

Layout::

    <header JSON, UTF-8, one line>\\n<array bytes, concatenated in header order>

The header holds ``format`` (``"segkit-ckpt-1"``), a ``tensors`` list of
``{name, shape, dtype}`` entries and a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

FORMAT_VERSION = "segkit-ckpt-1"

PathLike = Union[str, os.PathLike]


class CheckpointError(ValueError):
    pass


def save_arrays(path: PathLike, arrays: Dict[str, np.ndarray], meta: dict = None) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str})
        blobs.append(np.ascontiguousarray(le).tobytes())
    header = {"format": FORMAT_VERSION, "tensors": entries, "meta": meta or {}}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_arrays(path: PathLike) -> Tuple[Dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns ``(arrays, meta)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise CheckpointError(f"{path}: missing header terminator")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {header.get('format')!r}")
    arrays = {}
    offset = newline + 1
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated data for {entry['name']}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays, header.get("meta", {})
