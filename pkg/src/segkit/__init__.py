"""Right-ventricle segmentation toolkit built on a small numpy autodiff engine."""

from .ensemble import average_probability, fuse, majority_vote
from .estimator import ClaheTransformer, SegmentationNet
from .losses import LossConfig, compute_loss
from .metrics import dice_coefficient, hausdorff, mask_hausdorff
from .nets import Model, ModelSpec, build
from .tensor import Tensor, no_grad
from .trainer import TrainConfig, Trainer, cyclic_lr, evaluate, load_model, train

__version__ = "0.1.0"

__all__ = [
    "ClaheTransformer",
    "LossConfig",
    "Model",
    "ModelSpec",
    "SegmentationNet",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "average_probability",
    "build",
    "compute_loss",
    "cyclic_lr",
    "dice_coefficient",
    "evaluate",
    "fuse",
    "hausdorff",
    "load_model",
    "majority_vote",
    "mask_hausdorff",
    "no_grad",
    "train",
]
