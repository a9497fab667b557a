"""A small numpy neural-network core with explicit backward passes."""

from .gradcheck import check_module, grad_check, relative_error
from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    Identity,
    Mish,
    Module,
    ReLU,
    Sequential,
    Softmax,
    mish,
    mish_grad,
    softplus,
)
from .losses import FocalLossConfig, cross_entropy, focal_loss
from .optim import OptimizerConfig, optimizer_step

__all__ = [
    "BatchNorm", "Conv2d", "Dense", "FocalLossConfig", "Identity", "Mish", "Module",
    "OptimizerConfig", "ReLU", "Sequential", "Softmax", "check_module", "cross_entropy",
    "focal_loss", "grad_check", "mish", "mish_grad", "optimizer_step", "relative_error",
    "softplus",
]
