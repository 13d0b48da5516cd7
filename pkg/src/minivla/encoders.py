"""Feature extraction: instruction tokenizer, a 2-block self-attention text
encoder with a resampler connector head, and a patch vision encoder shared
by both camera views.

The text and vision towers keep the dataflow of their large pretrained
counterparts (token matrix -> contextual embeddings -> fixed-size latents;
patches -> tokens) at desk-scale widths, with no external weights.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ParameterSet, Tensor
from .nn import autodiff as ad
from .nn.blocks import (
    apply_layer_norm,
    cross_attention_block,
    init_cross_attention_block,
    init_layer_norm,
    init_linear,
    init_self_attention_block,
    self_attention_block,
    uniform_init,
)

__all__ = [
    "PAD_ID",
    "UNK_ID",
    "Vocabulary",
    "Instruction",
    "tokenize",
    "FreezeMask",
    "init_language_encoder",
    "encode_language",
    "init_connector",
    "connect_language",
    "init_vision_encoder",
    "encode_views",
]

PAD_ID = 0
UNK_ID = 1
_WORD = re.compile(r"[a-z0-9]+")


class Vocabulary:
    """Word-id table; ids 0/1 are reserved for PAD/UNK."""

    def __init__(self, tokens: list[str]):
        if tokens[:2] != ["<pad>", "<unk>"]:
            tokens = ["<pad>", "<unk>", *tokens]
        self.tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, word: str) -> int:
        return self._ids.get(word, UNK_ID)

    @classmethod
    def from_corpus(cls, texts) -> "Vocabulary":
        words = sorted({w for text in texts for w in _WORD.findall(text.lower())})
        return cls(["<pad>", "<unk>", *words])

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.strip()])


def default_vocabulary() -> Vocabulary:
    from .minisim import instruction_corpus

    return Vocabulary.from_corpus(instruction_corpus())


@dataclass(frozen=True)
class Instruction:
    """Tokenized instruction; ``variant`` 0 is the standard phrasing."""

    text: str
    token_ids: np.ndarray  # (seq_len,) int32, PAD-padded
    keep: np.ndarray  # (seq_len,) bool, content positions
    variant: int = 0


def tokenize(text: str, vocab: Vocabulary, seq_len: int = 16, variant: int = 0) -> Instruction:
    """Deterministic lower-cased word tokenization, truncated/padded to
    ``seq_len``. Unknown words map to UNK; empty text is rejected."""
    words = _WORD.findall(text.lower())
    if not words:
        raise ValueError(f"cannot tokenize empty instruction: {text!r}")
    ids = [vocab.id_of(w) for w in words][:seq_len]
    n = len(ids)
    token_ids = np.full(seq_len, PAD_ID, dtype=np.int32)
    token_ids[:n] = ids
    keep = np.zeros(seq_len, dtype=bool)
    keep[:n] = True
    return Instruction(text=text, token_ids=token_ids, keep=keep, variant=variant)


# ---------------------------------------------------------------------------
# language tower


def init_language_encoder(params: ParameterSet, cfg, vocab_size: int, rng, dtype) -> None:
    d = cfg.d_model
    params.add("lang.tok_embed", uniform_init(rng, (vocab_size, d), d, dtype))
    params.add("lang.pos_embed", uniform_init(rng, (cfg.seq_len, d), d, dtype))
    for i in range(1, cfg.lang_blocks + 1):
        init_self_attention_block(params, f"lang.block{i}", d, d * cfg.ffn_mult, rng, dtype)
    init_layer_norm(params, "lang.ln_out", d, dtype)


def encode_language(params: ParameterSet, cfg, token_ids: np.ndarray, keep: np.ndarray) -> Tensor:
    """(B, seq_len) ids -> (B, seq_len, d) contextual embeddings. PAD
    positions are excluded from attention through the key mask."""
    x = ad.add(ad.embedding(params["lang.tok_embed"], token_ids), params["lang.pos_embed"])
    for i in range(1, cfg.lang_blocks + 1):
        x = self_attention_block(params, f"lang.block{i}", x, cfg.n_heads, keep=keep)
    return apply_layer_norm(params, "lang.ln_out", x)


def init_connector(params: ParameterSet, cfg, rng, dtype) -> None:
    d = cfg.d_model
    params.add("conn.latents", rng.standard_normal((cfg.n_latents, d)).astype(dtype))
    for i in range(1, cfg.connector_rounds + 1):
        init_cross_attention_block(params, f"conn.round{i}", d, d * cfg.ffn_mult, rng, dtype)
    init_layer_norm(params, "conn.ln_out", d, dtype)


def connect_language(params: ParameterSet, cfg, embeddings: Tensor, keep: np.ndarray) -> Tensor:
    """Resample (B, seq_len, d) embeddings into (B, n_latents, d) through
    learned latent queries cross-attending under the pad mask."""
    # (1, q, d) latents broadcast up to the batch via the first residual add
    lat = ad.reshape(params["conn.latents"], (1, cfg.n_latents, cfg.d_model))
    for i in range(1, cfg.connector_rounds + 1):
        lat = cross_attention_block(params, f"conn.round{i}", lat, embeddings, cfg.n_heads, context_keep=keep)
    return apply_layer_norm(params, "conn.ln_out", lat)


# ---------------------------------------------------------------------------
# vision tower


def init_vision_encoder(params: ParameterSet, cfg, rng, dtype) -> None:
    d = cfg.d_model
    patch_dim = 3 * cfg.patch_size * cfg.patch_size
    init_linear(params, "vision.patch", patch_dim, d, rng, dtype)
    params.add("vision.pos_embed", uniform_init(rng, (cfg.patches_per_view, d), d, dtype))
    for i in range(1, cfg.vision_blocks + 1):
        init_self_attention_block(params, f"vision.block{i}", d, d * cfg.ffn_mult, rng, dtype)
    init_layer_norm(params, "vision.ln_out", d, dtype)
    params.add("obs_tags.view", uniform_init(rng, (cfg.n_views, d), d, dtype))
    params.add("obs_tags.time", uniform_init(rng, (cfg.window, d), d, dtype))


def _patchify(frames: np.ndarray, patch: int) -> np.ndarray:
    n, c, h, w = frames.shape
    g = h // patch
    x = frames.reshape(n, c, g, patch, g, patch)
    return x.transpose(0, 2, 4, 1, 3, 5).reshape(n, g * g, c * patch * patch)


def encode_views(params: ParameterSet, cfg, frames: np.ndarray) -> Tensor:
    """(B, t, views, 3, S, S) pixel window in [0,1] -> (B, t*views*P, d)
    observation tokens with additive view-id and time-id embeddings.

    ``t`` may be 1 or 2; the newest frame always carries the last time id.
    """
    frames = np.asarray(frames)
    B, t, v, c, h, w = frames.shape
    s = cfg.image_size
    if (c, h, w) != (3, s, s) or v != cfg.n_views or t not in (1, 2):
        raise nn.ShapeError(f"encode_views expects (B, 1|2, {cfg.n_views}, 3, {s}, {s}), got {frames.shape}")
    p = cfg.patches_per_view
    d = cfg.d_model
    flat = frames.reshape(B * t * v, c, h, w)
    patches = _patchify(flat, cfg.patch_size).astype(params["vision.patch.w"].data.dtype)
    x = nn.linear_forward(Tensor(patches), params["vision.patch.w"], params["vision.patch.b"])
    x = ad.add(x, params["vision.pos_embed"])
    for i in range(1, cfg.vision_blocks + 1):
        x = self_attention_block(params, f"vision.block{i}", x, cfg.n_heads)
    x = apply_layer_norm(params, "vision.ln_out", x)
    x = ad.reshape(x, (B, t, v, p, d))
    if not cfg.zero_tags:
        time_ids = np.arange(cfg.window - t, cfg.window)
        time_tags = ad.reshape(ad.embedding(params["obs_tags.time"], time_ids), (1, t, 1, 1, d))
        view_tags = ad.reshape(params["obs_tags.view"], (1, 1, v, 1, d))
        x = ad.add(ad.add(x, time_tags), view_tags)
    return ad.reshape(x, (B, t * v * p, d))


# ---------------------------------------------------------------------------
# stage freezing


@dataclass(frozen=True)
class FreezeMask:
    """Parameter-name prefixes to freeze for a training stage."""

    stage: int
    prefixes: tuple[str, ...]

    @classmethod
    def stage1(cls, cfg) -> "FreezeMask":
        # everything in the vision tower except its final transformer block
        frozen = ["vision.patch.", "vision.pos_embed", "vision.ln_out."]
        frozen += [f"vision.block{i}." for i in range(1, cfg.vision_blocks)]
        return cls(stage=1, prefixes=tuple(frozen))

    @classmethod
    def stage2(cls) -> "FreezeMask":
        return cls(stage=2, prefixes=())

    def apply(self, params: ParameterSet) -> None:
        params.freeze_prefixes(self.prefixes)
