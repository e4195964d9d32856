"""Minimal reverse-mode autodiff engine (float64, channel-last)."""

from .tensor import GraphError, NonFiniteError, Param, Tensor, no_grad
from .gradcheck import GradCheckReport, grad_check
from .optim import Adam
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    config_hash,
    load_checkpoint,
    save_checkpoint,
)
from . import ops
from .ops import BatchNormState, ShapeError

__all__ = [
    "Adam",
    "BatchNormState",
    "Checkpoint",
    "CheckpointError",
    "GradCheckReport",
    "GraphError",
    "NonFiniteError",
    "Param",
    "ShapeError",
    "Tensor",
    "config_hash",
    "grad_check",
    "load_checkpoint",
    "no_grad",
    "ops",
    "save_checkpoint",
]
