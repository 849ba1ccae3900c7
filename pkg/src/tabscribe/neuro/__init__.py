"""Minimal reverse-mode engine: layers, losses, Adam, gradient checking, checkpoints."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .layers import (
    CollapseToSequence,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    Lstm,
    MaxPool2x2,
    Parameter,
    ShapeError,
    Standardize,
)
from .losses import (
    InfeasibleTargetError,
    LabelRangeError,
    ctc_extend,
    ctc_greedy_decode,
    ctc_loss,
    ctc_loss_with_grad,
    ctc_min_frames,
    log_softmax,
    softmax,
    sparse_ce,
    sparse_ce_with_grad,
)
from .network import Network, NumericsError
from .optim import Adam, train_step

__all__ = [
    "Adam",
    "CheckpointError",
    "CollapseToSequence",
    "Conv2d",
    "Dense",
    "Dropout",
    "Flatten",
    "InfeasibleTargetError",
    "LabelRangeError",
    "Lstm",
    "MaxPool2x2",
    "Network",
    "NumericsError",
    "Parameter",
    "ShapeError",
    "Standardize",
    "ctc_extend",
    "ctc_greedy_decode",
    "ctc_loss",
    "ctc_loss_with_grad",
    "ctc_min_frames",
    "grad_check",
    "load_checkpoint",
    "log_softmax",
    "save_checkpoint",
    "softmax",
    "sparse_ce",
    "sparse_ce_with_grad",
    "train_step",
]
