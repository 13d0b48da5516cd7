"""Adam with bias correction and freeze-aware updates."""

from __future__ import annotations

import numpy as np

from .params import ParameterSet

__all__ = ["OptimizerState", "adam_step", "clip_grad_norm"]


class MissingGradientError(RuntimeError):
    """An unfrozen parameter has no gradient at update time."""


class OptimizerState:
    """First/second moment buffers plus step counter for Adam."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: ParameterSet, opt: OptimizerState) -> None:
    """Apply one bias-corrected Adam update to every unfrozen parameter.

    Frozen parameters are left bit-identical. Gradients are cleared after
    the update. Raises :class:`MissingGradientError` naming the first
    unfrozen parameter without a gradient.
    """
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    for name, p in params.items():
        if params.is_frozen(name):
            continue
        if p.grad is None:
            raise MissingGradientError(f"no gradient for unfrozen parameter '{name}'")
        g = p.grad
        m = opt.m.get(name)
        v = opt.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * (g * g)
        opt.m[name] = m
        opt.v[name] = v
        p.data = p.data - (opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)).astype(p.data.dtype, copy=False)
    params.zero_grads()


def clip_grad_norm(params: ParameterSet, max_norm: float) -> float:
    """Scale all unfrozen gradients so their global L2 norm is at most
    ``max_norm``. Returns the pre-clip norm."""
    sq = 0.0
    grads = []
    for name, p in params.items():
        if params.is_frozen(name) or p.grad is None:
            continue
        grads.append(p)
        sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(sq))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in grads:
            p.grad = (p.grad * scale).astype(p.data.dtype, copy=False)
    return norm
