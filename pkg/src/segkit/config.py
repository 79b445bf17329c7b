"""Experiment configuration files.

An experiment is described by one INI-style text file with the sections
``[experiment]``, ``[model]``, ``[loss]``, ``[train]`` and ``[data]``.
Every key is optional; unknown sections or keys are errors reported with
their line number.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from .data.preprocess import DataConfig
from .losses import LossConfig
from .nets import ModelSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> List[int]:
    text = text.strip()
    return [int(v) for v in re.split(r"[,\s]+", text) if v] if text else []


def _int_pair(text: str) -> Tuple[int, int]:
    vals = _int_list(text)
    if len(vals) != 2:
        raise ValueError(f"expected two integers, got {text!r}")
    return vals[0], vals[1]


def _opt_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none") else int(text)


SCHEMA: Dict[str, Dict[str, Callable[[str], object]]] = {
    "experiment": {"manifest": str, "out": str},
    "model": {
        "family": str,
        "depth": int,
        "base_width": int,
        "width_multiplier": int,
        "dilation_scheme": _int_list,
        "gcn_kernel": _opt_int,
        "batch_norm": _bool,
        "br_activation": _bool,
    },
    "loss": {
        "kind": str,
        "gamma": float,
        "lam": float,
        "tau": float,
        "eps": float,
        "delta": float,
        "reduction": str,
    },
    "train": {
        "epochs": int,
        "batch_size": int,
        "grad_accum": int,
        "lr_max": float,
        "lr_min": float,
        "cycle_length": int,
        "weight_decay": float,
        "beta1": float,
        "beta2": float,
        "adam_eps": float,
        "threshold": float,
        "seed": int,
    },
    "data": {
        "clahe": _bool,
        "clahe_clip": float,
        "clahe_tiles": _int_pair,
        "augment": _bool,
        "flips": _bool,
        "rotation": _bool,
        "oversample_factor": int,
        "oversample_threshold": float,
    },
}


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    manifest: Optional[str] = None
    out: Optional[str] = None
    base_dir: Path = Path(".")

    def manifest_path(self) -> Optional[Path]:
        if self.manifest is None:
            return None
        p = Path(self.manifest)
        return p if p.is_absolute() else self.base_dir / p

    def to_text(self) -> str:
        """Fully resolved configuration, defaults included, in the same file format."""
        t = self.train
        sections = {
            "experiment": {k: v for k, v in (("manifest", self.manifest), ("out", self.out)) if v is not None},
            "model": t.model.to_dict(),
            "loss": t.loss.to_dict(),
            "train": {k: v for k, v in t.to_dict().items() if k not in ("model", "loss", "data")},
            "data": t.data.to_dict(),
        }
        lines = []
        for name, values in sections.items():
            lines.append(f"[{name}]")
            for key in SCHEMA[name]:
                if key in values:
                    lines.append(f"{key} = {_format(values[key])}")
            lines.append("")
        return "\n".join(lines)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    return str(value)


def _line_of(lines: List[str], section: str, key: Optional[str] = None) -> int:
    current = None
    for i, raw in enumerate(lines, start=1):
        s = raw.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return 0


def parse_config(text: str, source: str = "<config>", base_dir: Path = Path(".")) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lines = text.splitlines()
    values: Dict[str, Dict[str, object]] = {name: {} for name in SCHEMA}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{_line_of(lines, section)}: unknown section [{section}]")
        for key, raw in parser.items(section):
            where = f"{source}:{_line_of(lines, section, key)}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
            try:
                values[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad value for {section}.{key}: {exc}") from exc
    try:
        cfg = TrainConfig(
            model=ModelSpec(**values["model"]),
            loss=LossConfig(**values["loss"]),
            data=DataConfig(**values["data"]),
            **values["train"],
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    exp = values["experiment"]
    return ExperimentConfig(cfg, exp.get("manifest"), exp.get("out"), base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror or exc})") from exc
    return parse_config(text, str(path), path.parent)
