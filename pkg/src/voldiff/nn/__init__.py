"""Minimal reverse-mode differentiation, MLPs and Adam."""

from .tensor import Tensor, backward, no_grad
from .mlp import MlpSpec, ParameterStore, init_mlp, mlp_forward
from .optim import Adam, NonFiniteGradient, cosine_lr
from .checkpoint import HEADER as CHECKPOINT_HEADER, load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "CHECKPOINT_HEADER",
    "MlpSpec",
    "NonFiniteGradient",
    "ParameterStore",
    "Tensor",
    "backward",
    "cosine_lr",
    "init_mlp",
    "load_checkpoint",
    "mlp_forward",
    "no_grad",
    "save_checkpoint",
]
