"""AdamW on flat parameter vectors, global-norm gradient clipping, cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    t: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int, dtype=np.float32) -> "AdamState":
        return cls(t=0, m=np.zeros(n, dtype=dtype), v=np.zeros(n, dtype=dtype))


def global_norm(grad: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(grad.astype(np.float64)))))


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, *,
              lr: float, weight_decay: float = 0.0, clip_norm: float | None = None,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """One decoupled-weight-decay Adam update; mutates `state`, returns new params."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("parameter / gradient / moment shapes disagree")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    g = grad
    if clip_norm is not None:
        norm = global_norm(g)
        if norm > clip_norm:
            g = g * (clip_norm / norm)
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * np.square(g)
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    out = params - lr * weight_decay * params
    out = out - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out.astype(params.dtype)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """lr0 * (1 + cos(pi * step / total)) / 2 on [0, total]."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0
