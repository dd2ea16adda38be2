"""Minimal numpy tensor engine with reverse-mode autodiff and Adam."""

from . import ops
from .optim import AdamState, ParamStore, adam_step, clip_grad_norm
from .tensor import Tensor, backward, grad_enabled, no_grad, set_debug

__all__ = [
    "AdamState",
    "ParamStore",
    "Tensor",
    "adam_step",
    "backward",
    "clip_grad_norm",
    "grad_enabled",
    "no_grad",
    "ops",
    "set_debug",
]
