"""Modality fusion: decoder blocks without a causal mask, then max-pooling.

Language latents act as queries over the observation tokens. Each block is
self-attention over the latents, cross-attention into the observations,
and a feed-forward, all with residuals and normalization. Pooling takes a
per-channel maximum over the latent rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ParameterSet, Tensor
from .nn import autodiff as ad
from .nn.blocks import apply_layer_norm, cross_attention_block, init_cross_attention_block, init_layer_norm

__all__ = ["FusedLatent", "init_fusion", "fuse", "pool", "fuse_and_pool"]


@dataclass(frozen=True)
class FusedLatent:
    """Pooled conditioning vector plus the pre-pool latent tokens."""

    vector: np.ndarray  # (d,)
    tokens: np.ndarray  # (n_latents, d)


def init_fusion(params: ParameterSet, cfg, rng, dtype) -> None:
    d = cfg.d_model
    for i in range(1, cfg.fusion_blocks + 1):
        init_cross_attention_block(params, f"fusion.block{i}", d, d * cfg.ffn_mult, rng, dtype, with_self=True)
    init_layer_norm(params, "fusion.ln_out", d, dtype)


def fuse(params: ParameterSet, cfg, lang_latents: Tensor, obs_tokens: Tensor) -> Tensor:
    """(B, q, d) language latents attend into (B, N, d) observation tokens;
    N may vary (72 or 144 tokens), the output stays (B, q, d)."""
    x = lang_latents
    for i in range(1, cfg.fusion_blocks + 1):
        x = cross_attention_block(params, f"fusion.block{i}", x, obs_tokens, cfg.n_heads, with_self=True)
    return apply_layer_norm(params, "fusion.ln_out", x)


def pool(latents: Tensor) -> Tensor:
    """Column-wise maximum over the latent rows: (.., q, d) -> (.., d)."""
    return ad.reduce_max(latents, axis=-2)


def fuse_and_pool(params: ParameterSet, cfg, lang_latents: Tensor, obs_tokens: Tensor) -> tuple[Tensor, Tensor]:
    tokens = fuse(params, cfg, lang_latents, obs_tokens)
    return pool(tokens), tokens
