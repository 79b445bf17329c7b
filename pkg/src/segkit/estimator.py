"""scikit-learn style wrappers around the trainer and preprocessing.

``SegmentationNet`` follows the estimator conventions: hyperparameters are
plain constructor arguments (so ``get_params``/``set_params``/``clone``
work), ``fit`` returns ``self`` and learned state lives in attributes with a
trailing underscore.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data.clahe import clahe
from .data.io import SampleMeta, SegSample
from .data.preprocess import DataConfig
from .losses import LossConfig
from .metrics import dice_coefficient
from .nets import ModelSpec
from .trainer import TrainConfig, Trainer, predict_proba
from .validation import check_images, check_masks, stack_if_uniform


def _samples(images, masks, prefix: str):
    return [SegSample(im, m, SampleMeta(f"{prefix}{i:05d}", "00")) for i, (im, m) in enumerate(zip(images, masks))]


class SegmentationNet(BaseEstimator):
    """Binary segmentation network trained with the project's training protocol.

    ``X`` is an ``(N, H, W)`` array (or list of 2-D arrays) of grayscale
    images in [0, 1]; ``y`` holds the matching 0/1 masks. When validation
    data is passed to :meth:`fit`, the weights of the best validation epoch
    are kept, otherwise those of the last epoch.
    """

    def __init__(
        self,
        family: str = "unet",
        depth: int = 4,
        base_width: int = 32,
        width_multiplier: int = 1,
        gcn_kernel: Optional[int] = None,
        batch_norm: bool = True,
        loss: str = "switching",
        lam: float = 0.75,
        tau: float = 0.01,
        gamma: float = 1.0,
        epochs: int = 600,
        batch_size: int = 8,
        lr_max: float = 1e-3,
        lr_min: float = 1e-6,
        cycle_length: int = 100,
        weight_decay: float = 1e-3,
        clahe: bool = True,
        augment: bool = True,
        threshold: float = 0.5,
        random_state: int = 0,
    ):
        self.family = family
        self.depth = depth
        self.base_width = base_width
        self.width_multiplier = width_multiplier
        self.gcn_kernel = gcn_kernel
        self.batch_norm = batch_norm
        self.loss = loss
        self.lam = lam
        self.tau = tau
        self.gamma = gamma
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.cycle_length = cycle_length
        self.weight_decay = weight_decay
        self.clahe = clahe
        self.augment = augment
        self.threshold = threshold
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        """The :class:`TrainConfig` these hyperparameters describe (validates them)."""
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_max=self.lr_max,
            lr_min=self.lr_min,
            cycle_length=self.cycle_length,
            weight_decay=self.weight_decay,
            threshold=self.threshold,
            seed=self.random_state,
            loss=LossConfig(kind=self.loss, gamma=self.gamma, lam=self.lam, tau=self.tau),
            model=ModelSpec(
                family=self.family,
                depth=self.depth,
                base_width=self.base_width,
                width_multiplier=self.width_multiplier,
                gcn_kernel=self.gcn_kernel,
                batch_norm=self.batch_norm,
            ),
            data=DataConfig(clahe=self.clahe, augment=self.augment),
        )

    def fit(self, X, y, X_val=None, y_val=None):
        cfg = self.train_config()
        images = check_images(X)
        masks = check_masks(y, images)
        val = []
        if X_val is not None:
            if y_val is None:
                raise ValueError("X_val given without y_val")
            val_images = check_images(X_val, "X_val")
            val = _samples(val_images, check_masks(y_val, val_images, "y_val"), "val")
        trainer = Trainer(cfg)
        best = {}

        def keep_best(entry):
            if trainer.best_epoch == entry.epoch:
                best["state"] = {k: v.copy() for k, v in trainer.model.state_arrays().items()}

        result = trainer.fit(_samples(images, masks, "train"), val, on_epoch=keep_best)
        if "state" in best:
            trainer.model.load_state_arrays(best["state"])
        self.model_ = trainer.model.eval()
        self.config_ = cfg
        self.history_ = result.history
        self.best_val_dice_ = result.best_val_dice if val else None
        self.best_epoch_ = result.best_epoch if val else None
        self.n_parameters_ = self.model_.n_parameters()
        return self

    def predict_proba(self, X):
        """Foreground probability per pixel, shaped like ``X`` (a list if sizes differ)."""
        check_is_fitted(self, "model_")
        images = check_images(X)
        return stack_if_uniform(predict_proba(self.model_, images, self.config_.data))

    def predict(self, X):
        probs = self.predict_proba(X)
        if isinstance(probs, list):
            return [p > self.threshold for p in probs]
        return probs > self.threshold

    def score(self, X, y) -> float:
        """Mean Dice coefficient of the predicted masks."""
        preds = self.predict(X)
        masks = check_masks(y, list(preds))
        return float(np.mean([dice_coefficient(p, m) for p, m in zip(preds, masks)]))


class ClaheTransformer(BaseEstimator, TransformerMixin):
    """Stateless CLAHE over a stack of images in [0, 1]."""

    def __init__(self, clip_limit: float = 2.0, tiles: Sequence[int] = (8, 8)):
        self.clip_limit = clip_limit
        self.tiles = tiles

    def fit(self, X, y=None):
        check_images(X)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        images = check_images(X)
        return stack_if_uniform([clahe(im, self.clip_limit, tuple(self.tiles)) for im in images])
