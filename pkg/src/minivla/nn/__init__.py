"""Minimal differentiable-compute substrate: tensors, a reverse-mode tape,
the layer kinds the model needs, Adam with freeze flags, and checkpoints."""

from . import autodiff
from .autodiff import MaskError, ShapeError, Tensor, backward, no_grad, tensor
from .blocks import (
    cross_attention_block,
    feed_forward,
    init_cross_attention_block,
    init_layer_norm,
    init_linear,
    init_self_attention_block,
    multi_head_attention,
    self_attention_block,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, NonDeterministicClosureError, gradient_check
from .layers import attention_forward, conv1d_forward, linear_forward
from .optim import MissingGradientError, OptimizerState, adam_step, clip_grad_norm
from .params import ParameterSet

__all__ = [
    "autodiff",
    "Tensor",
    "tensor",
    "no_grad",
    "backward",
    "ShapeError",
    "MaskError",
    "linear_forward",
    "conv1d_forward",
    "attention_forward",
    "multi_head_attention",
    "feed_forward",
    "self_attention_block",
    "cross_attention_block",
    "init_linear",
    "init_layer_norm",
    "init_self_attention_block",
    "init_cross_attention_block",
    "ParameterSet",
    "OptimizerState",
    "adam_step",
    "clip_grad_norm",
    "MissingGradientError",
    "gradient_check",
    "GradCheckReport",
    "NonDeterministicClosureError",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]
