"""Gradient-checked encoder/decoder with offset-based spatial aggregation."""

from .autodiff import Tensor, conv2d, gelu, logsumexp, offset_aggregate, upsample_nearest
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .model import ArchConfig, FeaturePyramid, TinyNet, softmax
from .optim import OptimConfig, TrainState, init_state

__all__ = [
    "ArchConfig",
    "FeaturePyramid",
    "OptimConfig",
    "Tensor",
    "TinyNet",
    "TrainState",
    "conv2d",
    "gelu",
    "grad_check",
    "init_state",
    "load_checkpoint",
    "logsumexp",
    "offset_aggregate",
    "save_checkpoint",
    "softmax",
    "upsample_nearest",
]
