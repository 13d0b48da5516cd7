"""Systematic data augmentation: salt-and-pepper noise, translation,
HSV color jitter, and robotic mixup over paired (observation, action)
samples. Every augmentation with identity parameters is a bitwise no-op,
and everything is deterministic under (seed, epoch, sample index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color import shift_hsv

__all__ = [
    "AugmentConfig",
    "MixPair",
    "salt_pepper",
    "affine",
    "color_jitter",
    "sample_lambda",
    "robotic_mixup",
    "augment_batch",
]


@dataclass(frozen=True)
class AugmentConfig:
    """Enables and strengths; defaults follow the best-performing combination
    (everything on except translation)."""

    salt_pepper_on: bool = True
    snr: float = 0.95
    affine_on: bool = False
    affine_amplitude: float = 0.15
    jitter_on: bool = True
    hsv_amplitude: float = 0.4
    mixup_on: bool = True
    mixup_alpha: float = 0.4
    mixup_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.snr <= 1.0:
            raise ValueError(f"snr must be in (0, 1], got {self.snr}")
        if not 0.0 <= self.affine_amplitude < 0.5:
            raise ValueError(f"affine amplitude must be in [0, 0.5), got {self.affine_amplitude}")
        if not 0.0 <= self.hsv_amplitude <= 1.0:
            raise ValueError(f"hsv amplitude must be in [0, 1], got {self.hsv_amplitude}")
        if self.mixup_alpha <= 0.0:
            raise ValueError(f"mixup alpha must be positive, got {self.mixup_alpha}")

    @classmethod
    def none(cls, seed: int = 0) -> "AugmentConfig":
        return cls(salt_pepper_on=False, affine_on=False, jitter_on=False, mixup_on=False, seed=seed)

    @classmethod
    def only(cls, which: str, seed: int = 0) -> "AugmentConfig":
        base = cls.none(seed)
        flags = {
            "salt_pepper": {"salt_pepper_on": True},
            "affine": {"affine_on": True},
            "jitter": {"jitter_on": True},
            "mixup": {"mixup_on": True},
        }
        if which not in flags:
            raise ValueError(f"unknown augmentation {which!r}, expected one of {sorted(flags)}")
        from dataclasses import replace

        return replace(base, **flags[which])


@dataclass(frozen=True)
class MixPair:
    """One mixed sample: shared lambda applied to frames and actions (and,
    downstream, to language embeddings)."""

    lam: float
    indices: tuple[int, int]
    frames: np.ndarray
    actions: np.ndarray


def salt_pepper(img: np.ndarray, snr: float, rng: np.random.Generator) -> np.ndarray:
    """Replace each pixel location with probability 1 - snr by black or
    white (equal odds, all three channels). Untouched pixels bit-identical."""
    if not 0.0 < snr <= 1.0:
        raise ValueError(f"snr must be in (0, 1], got {snr}")
    out = img.copy()
    h, w = img.shape[-2:]
    corrupt = rng.random((h, w)) >= snr
    white = rng.random((h, w)) < 0.5
    out[:, corrupt] = white[corrupt].astype(img.dtype)
    return out


def affine(img: np.ndarray, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Integer-pixel translation uniform in +-floor(amplitude * width) per
    axis; vacated regions are zero-filled."""
    h, w = img.shape[-2:]
    m_row = int(np.floor(amplitude * h))
    m_col = int(np.floor(amplitude * w))
    dr = int(rng.integers(-m_row, m_row + 1))
    dc = int(rng.integers(-m_col, m_col + 1))
    out = np.zeros_like(img)
    src_r = slice(max(0, -dr), h - max(0, dr))
    dst_r = slice(max(0, dr), h - max(0, -dr))
    src_c = slice(max(0, -dc), w - max(0, dc))
    dst_c = slice(max(0, dc), w - max(0, -dc))
    out[..., dst_r, dst_c] = img[..., src_r, src_c]
    return out


def color_jitter(img: np.ndarray, amp: float, rng: np.random.Generator) -> np.ndarray:
    """Hue shift uniform in +-amp/2 (wrapping), saturation and value scaled
    by uniform factors in [1 - amp, 1 + amp], clamped to [0, 1]."""
    if not 0.0 <= amp <= 1.0:
        raise ValueError(f"hsv amplitude must be in [0, 1], got {amp}")
    if amp == 0.0:
        return img.copy()
    dh = rng.uniform(-amp * 0.5, amp * 0.5)
    s_scale = rng.uniform(1.0 - amp, 1.0 + amp)
    v_scale = rng.uniform(1.0 - amp, 1.0 + amp)
    return shift_hsv(img, dh=dh, s_scale=s_scale, v_scale=v_scale).astype(img.dtype)


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """Beta(alpha, alpha) draw through the two-gamma construction."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    x = rng.gamma(alpha)
    y = rng.gamma(alpha)
    return float(x / (x + y))


def robotic_mixup(sample_i: tuple, sample_j: tuple, lam: float, indices: tuple[int, int] = (0, 1)) -> MixPair:
    """Convex combination of two (frames, actions) samples with one lambda."""
    frames_i, actions_i = sample_i
    frames_j, actions_j = sample_j
    if frames_i.shape != frames_j.shape or actions_i.shape != actions_j.shape:
        raise ValueError(
            f"mixup shape mismatch: frames {frames_i.shape} vs {frames_j.shape}, actions {actions_i.shape} vs {actions_j.shape}"
        )
    return MixPair(
        lam=float(lam),
        indices=indices,
        frames=lam * frames_i + (1.0 - lam) * frames_j,
        actions=lam * actions_i + (1.0 - lam) * actions_j,
    )


def sample_rng(cfg: AugmentConfig, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, index]))


def augment_frame(frame: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Geometric first, pixel-value last, so noise pixels stay unsmeared."""
    if cfg.affine_on:
        frame = affine(frame, cfg.affine_amplitude, rng)
    if cfg.jitter_on:
        frame = color_jitter(frame, cfg.hsv_amplitude, rng)
    if cfg.salt_pepper_on:
        frame = salt_pepper(frame, cfg.snr, rng)
    return frame


def augment_batch(frames: np.ndarray, chunks: np.ndarray, cfg: AugmentConfig, epoch: int):
    """Apply the per-frame pipeline then pairwise mixup.

    ``frames`` is (B, t, views, 3, S, S) float in [0,1]; ``chunks`` is
    (B, H, a). Returns (frames, chunks, partners, lams): ``partners[i]`` is
    the mixup partner index or -1, ``lams[i]`` the lambda (1.0 when
    unmixed) so callers can mix language embeddings the same way.
    """
    B = frames.shape[0]
    frames = frames.copy()
    chunks = chunks.copy()
    per_frame_on = cfg.salt_pepper_on or cfg.affine_on or cfg.jitter_on
    if per_frame_on:
        for i in range(B):
            rng = sample_rng(cfg, epoch, i)
            for t in range(frames.shape[1]):
                for v in range(frames.shape[2]):
                    frames[i, t, v] = augment_frame(frames[i, t, v], cfg, rng)

    partners = np.full(B, -1, dtype=np.int64)
    lams = np.ones(B, dtype=np.float64)
    if cfg.mixup_on and B >= 2:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 0x70707]))
        order = rng.permutation(B)
        originals_f = frames.copy()
        originals_c = chunks.copy()
        for p in range(B // 2):
            i, j = int(order[2 * p]), int(order[2 * p + 1])
            if rng.random() >= cfg.mixup_rate:
                continue
            lam = sample_lambda(cfg.mixup_alpha, rng)
            mi = robotic_mixup((originals_f[i], originals_c[i]), (originals_f[j], originals_c[j]), lam, (i, j))
            mj = robotic_mixup((originals_f[j], originals_c[j]), (originals_f[i], originals_c[i]), lam, (j, i))
            frames[i], chunks[i] = mi.frames, mi.actions
            frames[j], chunks[j] = mj.frames, mj.actions
            partners[i], partners[j] = j, i
            lams[i] = lams[j] = lam
    return frames, chunks, partners, lams
