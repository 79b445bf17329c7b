"""Training protocol: Adam with L2 regularization, cosine warm-restart schedule, validation-driven checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint as ckpt
from .data.io import SegSample
from .data.preprocess import DataConfig, prepare_samples, preprocess_image, stack_batch
from .data.transforms import augment, crop_array, oversample_samples, pad_amounts, pad_array
from .losses import LossConfig, compute_loss
from .metrics import SampleRecord, UndefinedHausdorffError, aggregate, dice_coefficient, mask_hausdorff, MetricsReport
from .nets import Model, ModelSpec, build
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "train_loss", "val_dice_mean", "val_hd_mean")
LOG_NAME = "train_log.csv"
BEST_NAME = "best.ckpt"
LAST_NAME = "last.ckpt"


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or gradient, or unusable data)."""


def derive_seed(seed: int, *purpose) -> int:
    """Sub-seed from a top-level seed and a purpose tuple, via SHA-256."""
    text = ":".join(str(p) for p in (seed,) + purpose)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


@dataclass
class TrainConfig:
    epochs: int = 600
    batch_size: int = 8
    grad_accum: int = 1
    lr_max: float = 1e-3
    lr_min: float = 1e-6
    cycle_length: int = 100
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: float = 0.5
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1 or self.grad_accum < 1:
            raise ValueError("batch_size and grad_accum must be >= 1")
        if self.cycle_length < 1:
            raise ValueError("cycle_length must be >= 1")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("loss", "model", "data")}
        d["loss"] = self.loss.to_dict()
        d["model"] = self.model.to_dict()
        d["data"] = self.data.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss = LossConfig(**d.pop("loss", {}))
        model = ModelSpec(**d.pop("model", {}))
        data = DataConfig(**d.pop("data", {}))
        return cls(loss=loss, model=model, data=data, **d)


def cyclic_lr(epoch: float, cfg: TrainConfig) -> float:
    """Cosine decay from ``lr_max`` toward ``lr_min`` over ``cycle_length`` epochs, restarting each cycle.

    Fractional epochs are accepted, which gives the continuous schedule.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    t = (epoch % cfg.cycle_length) / cfg.cycle_length
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * t))


class Adam:
    """Adam with the L2 penalty folded into the gradient (not decoupled weight decay)."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Adam":
        return cls(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)

    def step(self, params: Dict[str, Tensor], lr: float) -> None:
        for name, p in params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise TrainingError(f"non-finite gradient in parameter {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], step: int) -> None:
        self.t = step
        self.m = {k[len("adam.m.") :]: np.array(v) for k, v in arrays.items() if k.startswith("adam.m.")}
        self.v = {k[len("adam.v.") :]: np.array(v) for k, v in arrays.items() if k.startswith("adam.v.")}


def adam_step(params: Dict[str, Tensor], state: Adam, lr: float) -> None:
    state.step(params, lr)


# -- prediction and evaluation ---------------------------------------------------


def predict_proba(model: Model, images: Sequence[np.ndarray], data_cfg: DataConfig, batch_size: int = 8) -> List[np.ndarray]:
    """Foreground probability maps at each image's original size."""
    multiple = 2**model.spec.depth
    was_training = model.training
    model.eval()
    out: List[np.ndarray] = []
    try:
        with no_grad():
            for start in range(0, len(images), batch_size):
                chunk = images[start : start + batch_size]
                by_shape: Dict[Tuple[int, int], List[int]] = {}
                for i, im in enumerate(chunk):
                    by_shape.setdefault(np.shape(im), []).append(i)
                probs: List[Optional[np.ndarray]] = [None] * len(chunk)
                for shape, idxs in by_shape.items():
                    pad = pad_amounts(*shape, multiple)
                    batch = np.stack([pad_array(preprocess_image(chunk[i], data_cfg), pad) for i in idxs])
                    p = model.forward(batch[:, None].astype(model.dtype)).data[:, 0]
                    for i, pm in zip(idxs, p):
                        probs[i] = crop_array(pm, pad).astype(np.float64)
                out.extend(probs)
    finally:
        model.training = was_training
    return out


def score_sample(prob: np.ndarray, sample: SegSample, threshold: float = 0.5, spacing=None) -> SampleRecord:
    pred = prob > threshold
    dice = dice_coefficient(pred, sample.mask)
    try:
        hd = mask_hausdorff(pred, sample.mask, spacing or sample.meta.pixel_spacing)
    except UndefinedHausdorffError:
        hd = None
    m = sample.meta
    return SampleRecord(m.patient_id, m.slice_id, m.phase, m.contour_kind, dice, hd)


def evaluate_predictions(probs: Sequence[np.ndarray], samples: Sequence[SegSample], threshold: float = 0.5, spacing=None) -> MetricsReport:
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    return aggregate(score_sample(p, s, threshold, spacing) for p, s in zip(probs, samples))


def evaluate(model: Model, samples: Sequence[SegSample], data_cfg: Optional[DataConfig] = None, spacing=None, threshold: float = 0.5) -> MetricsReport:
    """Dice and Hausdorff of thresholded predictions against each sample's mask."""
    data_cfg = data_cfg or DataConfig()
    probs = predict_proba(model, [s.image for s in samples], data_cfg)
    return evaluate_predictions(probs, samples, threshold, spacing)


# -- training loop ---------------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_dice_mean: float
    val_hd_mean: float

    def row(self) -> str:
        return f"{self.epoch},{self.lr:.9e},{self.train_loss:.9e},{self.val_dice_mean:.9e},{self.val_hd_mean:.9e}"


@dataclass
class TrainResult:
    model: Model
    history: List[EpochLog]
    best_val_dice: float
    best_epoch: int
    out_dir: Optional[Path] = None


class Trainer:
    """Runs the epoch loop for one :class:`TrainConfig`.

    Randomness is derived per epoch and per sample from ``cfg.seed``, so a
    run resumed from a checkpoint replays exactly what an uninterrupted run
    would have done.
    """

    def __init__(self, cfg: TrainConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.model = build(cfg.model, seed=derive_seed(cfg.seed, "init"), dtype=dtype)
        self.optim = Adam.from_config(cfg)
        self.history: List[EpochLog] = []
        self.best_val_dice = -math.inf
        self.best_epoch = -1
        self.start_epoch = 0

    # checkpoints ---------------------------------------------------------------

    def save(self, path, epoch: int) -> None:
        arrays = {**self.model.state_arrays(), **self.optim.state_arrays()}
        meta = {
            "epoch": epoch,
            "adam_step": self.optim.t,
            "best_val_dice": self.best_val_dice,
            "best_epoch": self.best_epoch,
            "config": self.cfg.to_dict(),
            "dtype": np.dtype(self.dtype).str,
        }
        ckpt.save_arrays(path, arrays, meta)

    def restore(self, path) -> None:
        arrays, meta = ckpt.load_arrays(path)
        self.model.load_state_arrays(arrays)
        self.optim.load_state_arrays(arrays, int(meta["adam_step"]))
        self.best_val_dice = float(meta["best_val_dice"])
        self.best_epoch = int(meta["best_epoch"])
        self.start_epoch = int(meta["epoch"]) + 1

    # loop ------------------------------------------------------------------------

    def _batches(self, n: int, epoch: int) -> List[np.ndarray]:
        rng = np.random.default_rng(derive_seed(self.cfg.seed, "shuffle", epoch))
        order = rng.permutation(n)
        bs = self.cfg.batch_size
        return [order[i : i + bs] for i in range(0, n, bs)]

    def _training_sample(self, sample: SegSample, epoch: int, position: int) -> SegSample:
        dcfg = self.cfg.data
        if not dcfg.augment:
            return sample
        rng = np.random.default_rng(derive_seed(self.cfg.seed, "augment", epoch, position))
        return augment(
            sample,
            rng,
            angle=None if dcfg.rotation else 0.0,
            hflip=None if dcfg.flips else False,
            vflip=None if dcfg.flips else False,
        )

    def run_epoch(self, train: Sequence[SegSample], epoch: int) -> Tuple[float, float]:
        cfg = self.cfg
        lr = cyclic_lr(epoch, cfg)
        model = self.model.train()
        losses = []
        batches = self._batches(len(train), epoch)
        model.zero_grad()
        for b, idx in enumerate(batches):
            batch = [self._training_sample(train[i], epoch, int(i)) for i in idx]
            images, masks = stack_batch(batch, self.dtype)
            probs = model.forward(images)
            value = compute_loss(probs, masks, cfg.loss)
            loss = value.item()
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            total = value.total * (1.0 / cfg.grad_accum) if cfg.grad_accum > 1 else value.total
            total.backward()
            losses.append(loss)
            if (b + 1) % cfg.grad_accum == 0 or b == len(batches) - 1:
                try:
                    self.optim.step(model.params, lr)
                except TrainingError as exc:
                    raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
                model.zero_grad()
        return lr, float(np.mean(losses))

    def validate(self, val: Sequence[SegSample]) -> Tuple[float, float]:
        if not val:
            return float("nan"), float("nan")
        report = evaluate(self.model, val, self.cfg.data, threshold=self.cfg.threshold)
        dice = float(np.mean([r.dice for r in report.records]))
        hds = [r.hd_mm for r in report.records if r.hd_mm is not None]
        return dice, float(np.mean(hds)) if hds else float("nan")

    def fit(
        self,
        train: Sequence[SegSample],
        val: Sequence[SegSample],
        out_dir=None,
        stop_epoch: Optional[int] = None,
        on_epoch: Optional[Callable[[EpochLog], None]] = None,
    ) -> TrainResult:
        """Train on ``train`` (raw samples), selecting the best epoch by mean validation Dice.

        With ``out_dir`` set, writes the log plus ``best.ckpt`` and
        ``last.ckpt`` there. ``stop_epoch`` ends the run early (exclusive),
        which together with :meth:`restore` allows interrupted training.
        """
        if not train:
            raise TrainingError("training split is empty")
        cfg = self.cfg
        multiple = 2**cfg.model.depth
        train_prepared = prepare_samples(train, cfg.data, multiple)
        train_prepared = oversample_samples(train_prepared, cfg.data.oversample_threshold, cfg.data.oversample_factor)
        shapes = {s.image.shape for s in train_prepared}
        if len(shapes) != 1:
            raise TrainingError(f"training images must share one padded size, got {sorted(shapes)}")
        out = Path(out_dir) if out_dir is not None else None
        log_path = out / LOG_NAME if out is not None else None
        if log_path is not None and self.start_epoch == 0:
            out.mkdir(parents=True, exist_ok=True)
            log_path.write_text(self.log_header())
        end = cfg.epochs if stop_epoch is None else min(stop_epoch, cfg.epochs)
        for epoch in range(self.start_epoch, end):
            lr, train_loss = self.run_epoch(train_prepared, epoch)
            val_dice, val_hd = self.validate(val)
            entry = EpochLog(epoch, lr, train_loss, val_dice, val_hd)
            self.history.append(entry)
            logger.info("epoch %d lr %.3g loss %.4f val dice %.4f", epoch, lr, train_loss, val_dice)
            improved = not math.isnan(val_dice) and val_dice > self.best_val_dice
            if improved:
                self.best_val_dice, self.best_epoch = val_dice, epoch
            if out is not None:
                with open(log_path, "a") as fh:
                    fh.write(entry.row() + "\n")
                if improved or self.best_epoch < 0:
                    self.save(out / BEST_NAME, epoch)
                self.save(out / LAST_NAME, epoch)
            if on_epoch is not None:
                on_epoch(entry)
            self.start_epoch = epoch + 1
        return TrainResult(self.model, self.history, self.best_val_dice, self.best_epoch, out)

    def log_header(self) -> str:
        lines = [f"# {key}={json.dumps(value, sort_keys=True)}" for key, value in sorted(_flatten(self.cfg.to_dict()).items())]
        return "\n".join(lines) + "\n" + ",".join(LOG_COLUMNS) + "\n"


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def train(cfg: TrainConfig, train_samples: Sequence[SegSample], val_samples: Sequence[SegSample], out_dir=None) -> TrainResult:
    """Train a fresh model; see :meth:`Trainer.fit`."""
    return Trainer(cfg).fit(train_samples, val_samples, out_dir)


def read_log(path) -> List[EpochLog]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#") or line.startswith("epoch,"):
            continue
        e, lr, loss, dice, hd = line.split(",")
        rows.append(EpochLog(int(e), float(lr), float(loss), float(dice), float(hd)))
    return rows


def load_model(path) -> Tuple[Model, TrainConfig, dict]:
    """Rebuild a model (and its training config) from a checkpoint."""
    arrays, meta = ckpt.load_arrays(path)
    cfg = TrainConfig.from_dict(meta["config"])
    dtype = np.dtype(meta.get("dtype", "<f4"))
    model = build(cfg.model, seed=0, dtype=dtype)
    model.load_state_arrays(arrays)
    return model.eval(), cfg, meta
