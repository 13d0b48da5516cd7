"""Behavioral-cloning training: stage 1 on the standard phrasing with the
vision tower frozen (except its final block), stage 2 with everything
unfrozen and paraphrases injected, plus the single-phase baseline that
sees natural language from step 0.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import nn
from .augment import augment_batch
from .config import RunConfig
from .diffusion import NoiseNet, diffusion_loss
from .encoders import FreezeMask, Instruction, Vocabulary, default_vocabulary, tokenize
from .model import ModelConfig, conditioning, init_model_params
from .nn import OptimizerState, ParameterSet, adam_step, clip_grad_norm, load_checkpoint, save_checkpoint
from .nn import autodiff as ad

__all__ = [
    "StageSpec",
    "Trainer",
    "TrainingDivergedError",
    "StageError",
    "bc_step",
    "make_batch",
    "build_window_index",
    "sample_variants",
]

N_VARIANTS = 5


class TrainingDivergedError(RuntimeError):
    """The loss went non-finite; carries the global step index."""


class StageError(ValueError):
    """A stage launched out of order (stage 2 without a stage-1 result)."""


@dataclass(frozen=True)
class StageSpec:
    """One training phase: stage id fixes both the freeze mask and the
    instruction-sampling rule."""

    stage: int  # 1 | 2; 0 marks the direct-natural-language baseline
    epochs: int
    lr: float
    freeze: FreezeMask
    sampling: str  # "standard" | "uniform"

    def __post_init__(self):
        if self.stage == 1 and (self.sampling != "standard" or not self.freeze.prefixes):
            raise StageError("stage 1 must sample the standard phrasing with the vision freeze applied")
        if self.stage == 2 and (self.sampling != "uniform" or self.freeze.prefixes):
            raise StageError("stage 2 must sample all variants with nothing frozen")


def stage1_spec(cfg: RunConfig) -> StageSpec:
    return StageSpec(1, cfg.stage1_epochs, cfg.stage1_lr, FreezeMask.stage1(cfg.model), "standard")


def stage2_spec(cfg: RunConfig) -> StageSpec:
    return StageSpec(2, cfg.stage2_epochs, cfg.stage2_lr, FreezeMask.stage2(), "uniform")


def sample_variants(rng: np.random.Generator, n: int, sampling: str) -> np.ndarray:
    """Instruction-variant ids: all standard, or uniform over the five."""
    if sampling == "standard":
        return np.zeros(n, dtype=np.int64)
    if sampling == "uniform":
        return rng.integers(0, N_VARIANTS, size=n)
    raise ValueError(f"unknown sampling rule {sampling!r}")


# ---------------------------------------------------------------------------
# window construction


def build_window_index(demos, stride: int = 1) -> list[tuple[int, int]]:
    """(demo, t) pairs; every t yields a 2-frame window (t=0 duplicates)."""
    return [(di, t) for di, d in enumerate(demos) for t in range(0, d.length, stride)]


def action_chunk(demo, t: int, horizon: int) -> np.ndarray:
    """Future increments from t, padded past the end with zero motion and
    the final grip command held."""
    chunk = demo.actions[t : t + horizon]
    missing = horizon - len(chunk)
    if missing:
        hold = np.array([0.0, 0.0, demo.actions[-1, 2]], dtype=demo.actions.dtype)
        chunk = np.concatenate([chunk, np.tile(hold, (missing, 1))])
    return chunk


@dataclass
class Batch:
    frames: np.ndarray  # (B, window, views, 3, S, S) float in [0, 1]
    token_ids: np.ndarray  # (B, seq_len) int32
    keep: np.ndarray  # (B, seq_len) bool
    chunks: np.ndarray  # (B, H, a) float


def make_batch(demos, entries, variants, vocab: Vocabulary, model_cfg: ModelConfig, dtype, instr_cache: dict | None = None) -> Batch:
    frames, ids, keeps, chunks = [], [], [], []
    cache = instr_cache if instr_cache is not None else {}
    for (di, t), variant in zip(entries, variants):
        demo = demos[di]
        prev = max(t - 1, 0)
        window = np.stack([demo.frames[:, prev], demo.frames[:, t]])  # (window, views, 3, S, S)
        frames.append(window)
        text = demo.instructions[variant]
        instr = cache.get(text)
        if instr is None:
            instr = cache[text] = tokenize(text, vocab, model_cfg.seq_len, variant=variant)
        ids.append(instr.token_ids)
        keeps.append(instr.keep)
        chunks.append(action_chunk(demo, t, model_cfg.horizon))
    return Batch(
        frames=np.stack(frames).astype(dtype) / 255.0,
        token_ids=np.stack(ids),
        keep=np.stack(keeps),
        chunks=np.stack(chunks).astype(dtype),
    )


# ---------------------------------------------------------------------------
# one optimizer step


def _language_mixer(partners: np.ndarray, lams: np.ndarray):
    """Mix language embeddings with the same lambdas mixup used on frames
    and actions; pad masks take the union of both sources."""
    if (partners < 0).all():
        return None
    b = len(partners)
    perm = np.where(partners >= 0, partners, np.arange(b))
    gather = np.zeros((b, b))
    gather[np.arange(b), perm] = 1.0

    def mixer(emb, keep):
        lead = emb.shape
        lam = lams.reshape(b, 1, 1)
        flat = ad.reshape(emb, (b, lead[1] * lead[2]))
        partner_emb = ad.reshape(ad.matmul(nn.Tensor(gather.astype(emb.data.dtype)), flat), lead)
        mixed = ad.add(ad.mul(emb, lam), ad.mul(partner_emb, 1.0 - lam))
        return mixed, keep | keep[perm]

    return mixer


def bc_step(
    params: ParameterSet,
    opt: OptimizerState,
    batch: Batch,
    run_cfg: RunConfig,
    sched,
    rng: np.random.Generator,
    epoch: int,
    step_index: int = 0,
    augment: bool = True,
) -> float:
    """augment -> encode -> fuse -> pool -> diffusion loss -> backward ->
    clipped Adam update. Returns the batch-mean loss."""
    cfg = run_cfg.model
    frames, chunks = batch.frames, batch.chunks
    mixer = None
    aug = run_cfg.aug
    if augment and (aug.salt_pepper_on or aug.affine_on or aug.jitter_on or aug.mixup_on):
        frames, chunks, partners, lams = augment_batch(frames, chunks, aug, epoch)
        mixer = _language_mixer(partners, lams)
    pooled, _ = conditioning(params, cfg, batch.token_ids, batch.keep, frames, language_mixer=mixer)
    loss = diffusion_loss(chunks, pooled, NoiseNet(params, cfg), sched, rng)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingDivergedError(f"non-finite loss at step {step_index}")
    ad.backward(loss)
    clip_grad_norm(params, run_cfg.grad_clip)
    adam_step(params, opt)
    return value


# ---------------------------------------------------------------------------
# training phases


class Trainer:
    """Owns the dataset, parameters, and artifact directory for one run."""

    def __init__(self, run_cfg: RunConfig, demos, vocab: Vocabulary | None = None, params: ParameterSet | None = None):
        self.cfg = run_cfg
        self.demos = demos
        self.vocab = vocab or default_vocabulary()
        self.dtype = run_cfg.np_dtype()
        self.params = params if params is not None else init_model_params(run_cfg.model, len(self.vocab), seed=run_cfg.seed, dtype=self.dtype)
        self.sched = run_cfg.model.schedule()
        self.windows = build_window_index(demos, run_cfg.window_stride)
        self.global_step = 0
        self.instr_cache: dict[str, Instruction] = {}
        os.makedirs(run_cfg.out_dir, exist_ok=True)
        self.loss_csv = os.path.join(run_cfg.out_dir, "loss.csv")
        if not os.path.exists(self.loss_csv):
            with open(self.loss_csv, "w") as fh:
                fh.write("step,stage,loss,lr\n")

    # -- helpers

    def _ckpt(self, name: str) -> str:
        return os.path.join(self.cfg.out_dir, name)

    def _log(self, stage: int, loss: float, lr: float) -> None:
        with open(self.loss_csv, "a") as fh:
            fh.write(f"{self.global_step},{stage},{loss:.8f},{lr}\n")

    def _epoch_rng(self, purpose: int, stage: int, epoch: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.cfg.seed, purpose, stage, epoch]))

    def _run_epochs(self, spec: StageSpec, epoch_offset: int, label: int | None = None, freeze_epochs: int | None = None, lr_after: float | None = None) -> None:
        """Iterate shuffled mini-batches for ``spec.epochs`` epochs.

        ``freeze_epochs``/``lr_after`` implement the baseline's warmup: the
        freeze mask lifts and the learning rate switches partway through,
        mirroring the two-stage budget.
        """
        stage_label = spec.stage if label is None else label
        spec.freeze.apply(self.params)
        opt = OptimizerState(spec.lr)
        batch_size = self.cfg.batch_size
        for epoch in range(spec.epochs):
            if freeze_epochs is not None and epoch == freeze_epochs:
                FreezeMask.stage2().apply(self.params)
                opt = OptimizerState(lr_after if lr_after is not None else spec.lr)
            shuffle_rng = self._epoch_rng(101, stage_label, epoch)
            variant_rng = self._epoch_rng(102, stage_label, epoch)
            loss_rng = self._epoch_rng(103, stage_label, epoch)
            order = shuffle_rng.permutation(len(self.windows))
            for lo in range(0, len(order), batch_size):
                chosen = [self.windows[i] for i in order[lo : lo + batch_size]]
                variants = sample_variants(variant_rng, len(chosen), spec.sampling)
                batch = make_batch(self.demos, chosen, variants, self.vocab, self.cfg.model, self.dtype, self.instr_cache)
                lr = opt.lr
                loss = bc_step(self.params, opt, batch, self.cfg, self.sched, loss_rng, epoch_offset + epoch, self.global_step)
                self.global_step += 1
                self._log(stage_label, loss, lr)
            self._save_epoch(stage_label, epoch)

    def _save_epoch(self, stage_label: int, epoch: int) -> None:
        save_checkpoint(self.params, self._ckpt(f"stage{stage_label}_epoch{epoch + 1:03d}.rbbt"))

    # -- public phases

    def run_stage1(self) -> str:
        self._run_epochs(stage1_spec(self.cfg), epoch_offset=0)
        path = self._ckpt("stage1.rbbt")
        save_checkpoint(self.params, path)
        return path

    def run_stage2(self, stage1_path: str | None = None, from_scratch: bool = False) -> str:
        """Requires a stage-1 checkpoint; its values become the stage-2
        initialization bit for bit."""
        stage1_path = stage1_path or self._ckpt("stage1.rbbt")
        if os.path.exists(stage1_path):
            self.params = load_checkpoint(stage1_path, dtype=self.dtype)
        elif not from_scratch:
            raise StageError(f"stage 2 needs a stage-1 checkpoint at {stage1_path} (or an explicit from-scratch override)")
        self._run_epochs(stage2_spec(self.cfg), epoch_offset=self.cfg.stage1_epochs)
        path = self._ckpt("stage2.rbbt")
        save_checkpoint(self.params, path)
        return path

    def run_two_stage(self) -> str:
        self.run_stage1()
        return self.run_stage2()

    def run_direct_nl(self) -> str:
        """Equal-budget baseline: natural language from step 0, same warmup
        freeze schedule and learning rates as the two-stage run."""
        spec = StageSpec(
            stage=0,
            epochs=self.cfg.stage1_epochs + self.cfg.stage2_epochs,
            lr=self.cfg.stage1_lr,
            freeze=FreezeMask.stage1(self.cfg.model),
            sampling="uniform",
        )
        self._run_epochs(spec, epoch_offset=0, freeze_epochs=self.cfg.stage1_epochs, lr_after=self.cfg.stage2_lr)
        path = self._ckpt("direct_nl.rbbt")
        save_checkpoint(self.params, path)
        return path

    def save_run_metadata(self) -> None:
        from .config import save_config

        self.vocab.save(os.path.join(self.cfg.out_dir, "vocab.txt"))
        save_config(self.cfg, os.path.join(self.cfg.out_dir, "config.cfg"))
