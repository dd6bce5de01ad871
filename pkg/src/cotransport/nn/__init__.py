"""Minimal differentiable function stack: tape autodiff, MLPs with Gaussian
policy heads, AdamW with global-norm clipping, cosine schedule, and a binary
checkpoint format."""

from .autodiff import Tensor, gradients
from .models import (
    MlpSpec,
    NetworkParams,
    init_params,
    policy_entropy,
    policy_forward,
    policy_logprob_graph,
    value_forward,
    value_graph,
)
from .optim import AdamState, adam_step, cosine_lr, global_norm
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "gradients",
    "MlpSpec", "NetworkParams", "init_params", "policy_forward", "policy_logprob_graph",
    "policy_entropy", "value_forward", "value_graph",
    "AdamState", "adam_step", "cosine_lr", "global_norm",
    "save_checkpoint", "load_checkpoint",
]
