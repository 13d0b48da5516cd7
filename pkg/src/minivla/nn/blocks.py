"""Shared transformer building blocks and parameter initialization.

Initialization convention: projection weights are zero-mean uniform scaled
by 1/sqrt(fan_in), biases zero, layer-norm gain one. Learned query /
embedding tables use the same uniform rule unless stated otherwise at the
call site.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import attention_forward, linear_forward
from .params import ParameterSet

__all__ = [
    "init_linear",
    "init_layer_norm",
    "init_attention",
    "init_ffn",
    "init_self_attention_block",
    "init_cross_attention_block",
    "multi_head_attention",
    "feed_forward",
    "self_attention_block",
    "cross_attention_block",
    "apply_layer_norm",
]


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_linear(params: ParameterSet, prefix: str, d_in: int, d_out: int, rng, dtype) -> None:
    params.add(f"{prefix}.w", uniform_init(rng, (d_in, d_out), d_in, dtype))
    params.add(f"{prefix}.b", np.zeros(d_out, dtype=dtype))


def init_layer_norm(params: ParameterSet, prefix: str, d: int, dtype) -> None:
    params.add(f"{prefix}.g", np.ones(d, dtype=dtype))
    params.add(f"{prefix}.b", np.zeros(d, dtype=dtype))


def init_attention(params: ParameterSet, prefix: str, d: int, rng, dtype) -> None:
    for proj in ("q", "k", "v", "o"):
        init_linear(params, f"{prefix}.{proj}", d, d, rng, dtype)


def init_ffn(params: ParameterSet, prefix: str, d: int, d_hidden: int, rng, dtype) -> None:
    init_linear(params, f"{prefix}.in", d, d_hidden, rng, dtype)
    init_linear(params, f"{prefix}.out", d_hidden, d, rng, dtype)


def init_self_attention_block(params: ParameterSet, prefix: str, d: int, d_hidden: int, rng, dtype) -> None:
    init_layer_norm(params, f"{prefix}.ln1", d, dtype)
    init_attention(params, f"{prefix}.attn", d, rng, dtype)
    init_layer_norm(params, f"{prefix}.ln2", d, dtype)
    init_ffn(params, f"{prefix}.ffn", d, d_hidden, rng, dtype)


def init_cross_attention_block(params: ParameterSet, prefix: str, d: int, d_hidden: int, rng, dtype, with_self: bool = False) -> None:
    if with_self:
        init_layer_norm(params, f"{prefix}.ln_self", d, dtype)
        init_attention(params, f"{prefix}.self_attn", d, rng, dtype)
    init_layer_norm(params, f"{prefix}.ln_cross", d, dtype)
    init_attention(params, f"{prefix}.cross_attn", d, rng, dtype)
    init_layer_norm(params, f"{prefix}.ln_ffn", d, dtype)
    init_ffn(params, f"{prefix}.ffn", d, d_hidden, rng, dtype)


def apply_layer_norm(params: ParameterSet, prefix: str, x: Tensor) -> Tensor:
    return ad.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _project(params: ParameterSet, prefix: str, x: Tensor) -> Tensor:
    return linear_forward(x, params[f"{prefix}.w"], params[f"{prefix}.b"])


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    # (..., n, d) -> (..., h, n, d/h)
    *lead, n, d = x.shape
    x = ad.reshape(x, (*lead, n, n_heads, d // n_heads))
    ndim = len(lead) + 3
    axes = tuple(range(len(lead))) + (ndim - 2, ndim - 3, ndim - 1)
    return ad.transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    # (..., h, n, dh) -> (..., n, h*dh)
    *lead, h, n, dh = x.shape
    ndim = len(lead) + 3
    axes = tuple(range(len(lead))) + (ndim - 2, ndim - 3, ndim - 1)
    return ad.reshape(ad.transpose(x, axes), (*lead, n, h * dh))


def multi_head_attention(params: ParameterSet, prefix: str, q_in: Tensor, kv_in: Tensor, n_heads: int, keep=None) -> Tensor:
    """Projected multi-head attention over the last two axes.

    ``keep`` is a boolean visible-key mask of shape (..., n_k), shared
    across heads.
    """
    q = _split_heads(_project(params, f"{prefix}.q", q_in), n_heads)
    k = _split_heads(_project(params, f"{prefix}.k", kv_in), n_heads)
    v = _split_heads(_project(params, f"{prefix}.v", kv_in), n_heads)
    if keep is not None:
        keep = np.asarray(keep, dtype=bool)
        # insert the head axis so the mask broadcasts over heads and queries
        keep = keep.reshape(keep.shape[:-1] + (1, 1, keep.shape[-1]))
    out = attention_forward(q, k, v, keep=keep)
    return _project(params, f"{prefix}.o", _merge_heads(out))


def feed_forward(params: ParameterSet, prefix: str, x: Tensor) -> Tensor:
    return _project(params, f"{prefix}.out", ad.gelu(_project(params, f"{prefix}.in", x)))


def self_attention_block(params: ParameterSet, prefix: str, x: Tensor, n_heads: int, keep=None) -> Tensor:
    """Pre-norm residual block: self-attention then feed-forward."""
    h = apply_layer_norm(params, f"{prefix}.ln1", x)
    x = ad.add(x, multi_head_attention(params, f"{prefix}.attn", h, h, n_heads, keep=keep))
    h = apply_layer_norm(params, f"{prefix}.ln2", x)
    return ad.add(x, feed_forward(params, f"{prefix}.ffn", h))


def cross_attention_block(params: ParameterSet, prefix: str, x: Tensor, context: Tensor, n_heads: int, context_keep=None, with_self: bool = False) -> Tensor:
    """Pre-norm residual block: optional self-attention over the queries,
    cross-attention into ``context``, then feed-forward."""
    if with_self:
        h = apply_layer_norm(params, f"{prefix}.ln_self", x)
        x = ad.add(x, multi_head_attention(params, f"{prefix}.self_attn", h, h, n_heads))
    h = apply_layer_norm(params, f"{prefix}.ln_cross", x)
    x = ad.add(x, multi_head_attention(params, f"{prefix}.cross_attn", h, context, n_heads, keep=context_keep))
    h = apply_layer_norm(params, f"{prefix}.ln_ffn", x)
    return ad.add(x, feed_forward(params, f"{prefix}.ffn", h))
