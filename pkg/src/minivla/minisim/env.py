"""Single-owner environment wrapper around the functional world."""

from __future__ import annotations

import numpy as np

from .render import RenderConfig, observe_u8
from .world import WorldState, sample_initial_state, step

__all__ = ["MiniEnv"]


class MiniEnv:
    """Holds one mutable WorldState plus the render palette for this run."""

    def __init__(self, state: WorldState | None = None, render_cfg: RenderConfig | None = None, seed: int = 0, shift: bool = False):
        if render_cfg is None:
            render_cfg = RenderConfig.shifted() if shift else RenderConfig()
        self.render_cfg = render_cfg
        self.shift = shift
        if state is None:
            state = sample_initial_state(np.random.default_rng(seed), shift=shift)
        self.state = state

    def reset(self, state: WorldState) -> None:
        self.state = state

    def step(self, action) -> WorldState:
        self.state = step(self.state, action)
        return self.state

    def observe(self) -> np.ndarray:
        """(2, 3, 48, 48) uint8 camera frames, quantized like the dataset."""
        return observe_u8(self.state, self.render_cfg)
