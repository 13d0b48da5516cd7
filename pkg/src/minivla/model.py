"""Full-model assembly: configuration, parameter initialization, the
conditioning pipeline (encode -> fuse -> pool), and the executable policy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import diffusion, encoders, fusion
from .diffusion import NoiseNet, RecedingHorizonExecutor, build_schedule, sample_actions
from .encoders import Instruction, Vocabulary, tokenize
from .fusion import FusedLatent
from .nn import ParameterSet, Tensor
from .nn import autodiff as ad

__all__ = ["ModelConfig", "init_model_params", "conditioning", "VLAPolicy"]


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    ffn_mult: int = 4
    # language tower
    seq_len: int = 16
    lang_blocks: int = 2
    n_latents: int = 8
    connector_rounds: int = 2
    # vision tower
    image_size: int = 48
    patch_size: int = 8
    vision_blocks: int = 2
    n_views: int = 2
    window: int = 2
    zero_tags: bool = False
    # fusion
    fusion_blocks: int = 2
    # action head
    horizon: int = 8
    n_exec: int = 4
    action_dim: int = 3
    base_channels: int = 32
    step_embed_dim: int = 16
    k_steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sample_steps: int = 10

    @property
    def patches_per_view(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def schedule(self) -> diffusion.DiffusionSchedule:
        return build_schedule(self.k_steps, self.beta_start, self.beta_end)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def init_model_params(cfg: ModelConfig, vocab_size: int, seed: int = 0, dtype=np.float32) -> ParameterSet:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11]))
    params = ParameterSet()
    encoders.init_language_encoder(params, cfg, vocab_size, rng, dtype)
    encoders.init_connector(params, cfg, rng, dtype)
    encoders.init_vision_encoder(params, cfg, rng, dtype)
    fusion.init_fusion(params, cfg, rng, dtype)
    diffusion.init_noise_net(params, cfg, rng, dtype)
    return params


def conditioning(
    params: ParameterSet,
    cfg: ModelConfig,
    token_ids: np.ndarray,
    keep: np.ndarray,
    frames: np.ndarray,
    language_mixer=None,
) -> tuple[Tensor, Tensor]:
    """Run encode -> connect -> encode_views -> fuse -> pool.

    ``language_mixer`` may rewrite (embeddings, keep) after the language
    encoder (mixup operates at that point). Returns (pooled (B, d),
    latent tokens (B, q, d)).
    """
    emb = encoders.encode_language(params, cfg, token_ids, keep)
    if language_mixer is not None:
        emb, keep = language_mixer(emb, keep)
    lang_latents = encoders.connect_language(params, cfg, emb, keep)
    obs_tokens = encoders.encode_views(params, cfg, frames)
    return fusion.fuse_and_pool(params, cfg, lang_latents, obs_tokens)


def fused_latent_for(params: ParameterSet, cfg: ModelConfig, instr: Instruction, frames: np.ndarray) -> FusedLatent:
    """Single-sample convenience wrapper returning the domain type."""
    with ad.no_grad():
        pooled, tokens = conditioning(params, cfg, instr.token_ids[None], instr.keep[None], frames[None])
    return FusedLatent(vector=pooled.data[0], tokens=tokens.data[0])


class VLAPolicy:
    """Receding-horizon policy: encode the window, sample a chunk, execute
    a prefix, replan. Pure under a fixed seed when deterministic."""

    def __init__(
        self,
        params: ParameterSet,
        cfg: ModelConfig,
        vocab: Vocabulary,
        seed: int = 0,
        deterministic: bool = True,
    ):
        self.params = params
        self.cfg = cfg
        self.vocab = vocab
        self.sched = cfg.schedule()
        self.net = NoiseNet(params, cfg)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E1]))
        self.deterministic = deterministic
        self.instruction: Instruction | None = None
        self.executor = RecedingHorizonExecutor(self._plan, cfg.horizon, cfg.n_exec, cfg.window)

    def set_instruction(self, text: str) -> None:
        """Swap the task; queued actions from the old instruction drop."""
        self.instruction = tokenize(text, self.vocab, self.cfg.seq_len)
        self.executor.flush()

    def act(self, frames_u8: np.ndarray) -> np.ndarray:
        """(views, 3, S, S) uint8 observation -> one (3,) action."""
        if self.instruction is None:
            raise RuntimeError("set_instruction must be called before act")
        return self.executor.step(frames_u8)

    def _plan(self, window: tuple) -> np.ndarray:
        frames = list(window)
        if len(frames) < self.cfg.window:
            frames = [frames[0]] * (self.cfg.window - len(frames)) + frames
        stacked = np.stack(frames).astype(np.float32) / 255.0  # (t, v, 3, S, S)
        with ad.no_grad():
            pooled, _ = conditioning(
                self.params,
                self.cfg,
                self.instruction.token_ids[None],
                self.instruction.keep[None],
                stacked[None],
            )
        return sample_actions(
            pooled,
            self.net,
            self.sched,
            self.rng,
            deterministic=self.deterministic,
            n_steps=self.cfg.sample_steps,
            horizon=self.cfg.horizon,
            action_dim=self.cfg.action_dim,
        )
