"""CNN-based denoising diffusion over action chunks.

Forward noising uses the variance-preserving form
``A_k = sqrt(abar_k) A_0 + sqrt(1 - abar_k) eps`` with ``abar_0 = 1``
(k = 0 is the clean sample). The noise net is a temporal conv
encoder-decoder (channels 32 -> 64 -> 32 over the horizon axis) with a
sinusoidal step embedding and the fused conditioning vector injected as
per-channel scale and shift at every stage.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .nn import ParameterSet, Tensor
from .nn import autodiff as ad
from .nn.blocks import init_linear, uniform_init
from .nn.layers import conv1d_forward, linear_forward

__all__ = [
    "DiffusionSchedule",
    "build_schedule",
    "forward_noise",
    "init_noise_net",
    "NoiseNet",
    "predict_noise",
    "diffusion_loss",
    "sample_actions",
    "SamplerDivergedError",
    "RecedingHorizonExecutor",
]

CHUNK_CLAMP = 1.2  # tolerate mild overshoot, catch divergence


class SamplerDivergedError(RuntimeError):
    """A reverse-sampling iterate went non-finite."""


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise variances and their cumulative products."""

    betas: np.ndarray  # (K,) float64
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def k_steps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, k: int) -> float:
        """abar at step k, with the k=0 clean-sample convention."""
        if not 0 <= k <= self.k_steps:
            raise ValueError(f"step {k} outside [0, {self.k_steps}]")
        return 1.0 if k == 0 else float(self.alpha_bars[k - 1])


def build_schedule(k_steps: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    """Linear beta spacing; cumulative products computed in 64-bit."""
    if k_steps < 2:
        raise ValueError(f"need at least 2 diffusion steps, got {k_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"betas must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, k_steps, dtype=np.float64)
    alphas = 1.0 - betas
    return DiffusionSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def forward_noise(chunk: np.ndarray, k: int, eps: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    """Noise a clean chunk to diffusion step k (1-indexed)."""
    if not 1 <= k <= sched.k_steps:
        raise ValueError(f"diffusion step {k} outside [1, {sched.k_steps}]")
    ab = sched.alpha_bar(k)
    return np.sqrt(ab) * chunk + np.sqrt(1.0 - ab) * eps


# ---------------------------------------------------------------------------
# noise-prediction network


def init_noise_net(params: ParameterSet, cfg, rng, dtype) -> None:
    a = cfg.action_dim
    c = cfg.base_channels  # 32 -> 64 -> 32
    cond_dim = cfg.d_model + cfg.d_model
    init_linear(params, "policy.step_proj", cfg.step_embed_dim, cfg.d_model, rng, dtype)
    _init_conv(params, "policy.in_conv", a, c, 3, rng, dtype)
    _init_film(params, "policy.film_in", cond_dim, c, rng, dtype)
    _init_conv(params, "policy.down_conv", c, 2 * c, 3, rng, dtype)
    _init_film(params, "policy.film_down", cond_dim, 2 * c, rng, dtype)
    _init_conv(params, "policy.mid_conv", 2 * c, 2 * c, 3, rng, dtype)
    _init_film(params, "policy.film_mid", cond_dim, 2 * c, rng, dtype)
    _init_conv(params, "policy.up_conv", 3 * c, c, 3, rng, dtype)
    _init_film(params, "policy.film_up", cond_dim, c, rng, dtype)
    _init_conv(params, "policy.out_conv", c, a, 3, rng, dtype)


def _init_conv(params, prefix, c_in, c_out, k, rng, dtype):
    params.add(f"{prefix}.w", uniform_init(rng, (c_out, c_in, k), c_in * k, dtype))
    params.add(f"{prefix}.b", np.zeros(c_out, dtype=dtype))


def _init_film(params, prefix, cond_dim, channels, rng, dtype):
    init_linear(params, f"{prefix}.scale", cond_dim, channels, rng, dtype)
    init_linear(params, f"{prefix}.shift", cond_dim, channels, rng, dtype)


def _film(params, prefix, h: Tensor, cond: Tensor) -> Tensor:
    b, c = h.shape[0], h.shape[1]
    scale = ad.reshape(linear_forward(cond, params[f"{prefix}.scale.w"], params[f"{prefix}.scale.b"]), (b, c, 1))
    shift = ad.reshape(linear_forward(cond, params[f"{prefix}.shift.w"], params[f"{prefix}.shift.b"]), (b, c, 1))
    return ad.add(ad.mul(h, ad.add(scale, 1.0)), shift)


def sinusoidal_step_embedding(k: np.ndarray, dim: int, dtype=np.float64) -> np.ndarray:
    """(B,) integer steps -> (B, dim) sin/cos features."""
    k = np.asarray(k, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = k * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


def predict_noise(params: ParameterSet, cfg, noisy_chunk, k, cond: Tensor) -> Tensor:
    """(B, H, a) noised chunks at steps ``k`` (B,) conditioned on (B, d)
    fused vectors -> (B, H, a) noise estimates."""
    dtype = params["policy.in_conv.w"].data.dtype
    x = noisy_chunk if isinstance(noisy_chunk, Tensor) else Tensor(np.asarray(noisy_chunk, dtype=dtype))
    temb = Tensor(sinusoidal_step_embedding(k, cfg.step_embed_dim, dtype))
    temb = ad.gelu(linear_forward(temb, params["policy.step_proj.w"], params["policy.step_proj.b"]))
    c = ad.concat([cond, temb], axis=-1)

    h = ad.transpose(x, (0, 2, 1))  # (B, a, H)
    e1 = ad.gelu(_film(params, "policy.film_in", conv1d_forward(h, params["policy.in_conv.w"], params["policy.in_conv.b"], padding=1), c))
    e2 = ad.gelu(_film(params, "policy.film_down", conv1d_forward(e1, params["policy.down_conv.w"], params["policy.down_conv.b"], stride=2, padding=1), c))
    m = ad.gelu(_film(params, "policy.film_mid", conv1d_forward(e2, params["policy.mid_conv.w"], params["policy.mid_conv.b"], padding=1), c))
    up = ad.concat([ad.repeat(m, 2, axis=-1), e1], axis=1)  # skip connection
    d1 = ad.gelu(_film(params, "policy.film_up", conv1d_forward(up, params["policy.up_conv.w"], params["policy.up_conv.b"], padding=1), c))
    out = conv1d_forward(d1, params["policy.out_conv.w"], params["policy.out_conv.b"], padding=1)
    return ad.transpose(out, (0, 2, 1))


@dataclass
class NoiseNet:
    """Bound (params, cfg) pair exposing the batched callable interface."""

    params: ParameterSet
    cfg: object

    def __call__(self, noisy_chunk, k, cond) -> Tensor:
        if not isinstance(cond, Tensor):
            cond = Tensor(np.asarray(cond, dtype=self.params["policy.in_conv.w"].data.dtype))
        return predict_noise(self.params, self.cfg, noisy_chunk, k, cond)


# ---------------------------------------------------------------------------
# training loss and reverse sampling


def diffusion_loss(chunks: np.ndarray, cond, net, sched: DiffusionSchedule, rng: np.random.Generator) -> Tensor:
    """Noise-prediction MSE: sample k uniformly in [1, K] and a unit-normal
    eps per chunk, return mean squared error of the net's estimate.

    Accepts a single (H, a) chunk or a (B, H, a) batch; ``net`` is any
    callable (noisy, k, cond) -> estimate.
    """
    chunks = np.asarray(chunks, dtype=np.float64)
    single = chunks.ndim == 2
    if single:
        chunks = chunks[None]
    ks = rng.integers(1, sched.k_steps + 1, size=chunks.shape[0])
    eps = rng.standard_normal(chunks.shape)
    ab = sched.alpha_bars[ks - 1][:, None, None]
    noisy = np.sqrt(ab) * chunks + np.sqrt(1.0 - ab) * eps
    if isinstance(cond, np.ndarray) and cond.ndim == 1:
        cond = cond[None]
    pred = net(noisy, ks, cond)
    if not isinstance(pred, Tensor):
        pred = Tensor(np.asarray(pred))
    err = ad.sub(pred, Tensor(eps.astype(pred.data.dtype)))
    return ad.reduce_mean(ad.mul(err, err))


def _sample_step_sequence(k_steps: int, n_steps: int) -> list[int]:
    ks = np.unique(np.round(np.linspace(0, k_steps, n_steps + 1)).astype(int))
    return list(ks[::-1])


def sample_actions(
    cond,
    net,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
    deterministic: bool = True,
    n_steps: int = 10,
    horizon: int = 8,
    action_dim: int = 3,
) -> np.ndarray:
    """Draw a unit-normal seed at k = K and denoise it to a clean chunk.

    Deterministic mode runs the noise-free strided reverse rule; stochastic
    mode runs the full ancestral chain with fresh noise from ``rng``. The
    final chunk is clamped to +-1.2.
    """
    x = rng.standard_normal((horizon, action_dim))

    def estimate(xk, k):
        out = net(xk[None], np.array([k]), cond)
        return out.data[0] if isinstance(out, Tensor) else np.asarray(out)[0]

    if deterministic:
        seq = _sample_step_sequence(sched.k_steps, n_steps)
        for k_hi, k_lo in zip(seq[:-1], seq[1:]):
            eps_hat = estimate(x, k_hi)
            ab_hi, ab_lo = sched.alpha_bar(k_hi), sched.alpha_bar(k_lo)
            x0 = (x - np.sqrt(1.0 - ab_hi) * eps_hat) / np.sqrt(ab_hi)
            x = np.sqrt(ab_lo) * x0 + np.sqrt(1.0 - ab_lo) * eps_hat
            if not np.isfinite(x).all():
                raise SamplerDivergedError(f"non-finite sample at reverse step k={k_lo}")
    else:
        for k in range(sched.k_steps, 0, -1):
            eps_hat = estimate(x, k)
            ab, ab_prev = sched.alpha_bar(k), sched.alpha_bar(k - 1)
            beta = sched.betas[k - 1]
            mean = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(sched.alphas[k - 1])
            if k > 1:
                var = beta * (1.0 - ab_prev) / (1.0 - ab)
                x = mean + np.sqrt(var) * rng.standard_normal(x.shape)
            else:
                x = mean
            if not np.isfinite(x).all():
                raise SamplerDivergedError(f"non-finite sample at reverse step k={k - 1}")
    return np.clip(x, -CHUNK_CLAMP, CHUNK_CLAMP)


# ---------------------------------------------------------------------------
# receding-horizon execution


class RecedingHorizonExecutor:
    """Plan a horizon, execute a prefix, replan on the next observation.

    ``plan`` maps the current observation window (a tuple of 1-2 frames,
    newest last) to an (H, a) action chunk; the executor refills its buffer
    with the first ``n_exec`` rows whenever it runs dry.
    """

    def __init__(self, plan, horizon: int = 8, n_exec: int = 4, window: int = 2):
        if not 1 <= n_exec <= horizon:
            raise ValueError(f"n_exec {n_exec} outside [1, {horizon}]")
        self._plan = plan
        self.n_exec = n_exec
        self.window = deque(maxlen=window)
        self.buffer: deque = deque()
        self.plans_made = 0

    def step(self, observation) -> np.ndarray:
        if observation is None:
            raise ValueError("receding-horizon step needs an observation")
        self.window.append(observation)
        if not self.buffer:
            chunk = np.asarray(self._plan(tuple(self.window)))
            self.buffer.extend(chunk[: self.n_exec])
            self.plans_made += 1
        return self.buffer.popleft()

    def flush(self) -> None:
        """Drop queued actions (instruction change); keeps the window."""
        self.buffer.clear()
