"""Deterministic flat-shaded rasterizer for the two camera views.

The static view covers the whole table; the gripper view is a 0.3-wide
crop centered on the gripper, re-rasterized at the same resolution. All
drawing happens in world coordinates mapped onto the pixel grid, so the
crop is a true zoom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..color import shift_hsv
from .world import (
    BLOCK_HALF,
    DRAWER_X,
    DRAWER_TRAVEL,
    HANDLE_Y_CLOSED,
    ZONE_CENTER,
    ZONE_HALF,
    WorldState,
    handle_pos,
)

__all__ = ["RenderConfig", "render_view", "render_views", "observe_u8"]

RES = 48
GRIPPER_VIEW_HALF = 0.15  # 0.3-wide crop

BLOCK_COLORS = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.75, 0.12),
    "blue": (0.12, 0.18, 0.88),
}


@dataclass(frozen=True)
class RenderConfig:
    """Scene palette; the shift variant mimics an unfamiliar environment."""

    resolution: int = RES
    bg: tuple = (0.42, 0.40, 0.38)
    hue_shift: float = 0.0
    value_scale: float = 1.0

    @classmethod
    def shifted(cls) -> "RenderConfig":
        return cls(bg=(0.33, 0.44, 0.40), hue_shift=0.10, value_scale=0.90)


def _rect(X, Y, cx, cy, hx, hy):
    return (np.abs(X - cx) <= hx) & (np.abs(Y - cy) <= hy)


def _disc(X, Y, cx, cy, r):
    return (X - cx) ** 2 + (Y - cy) ** 2 <= r * r


def render_view(state: WorldState, center, half: float, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Rasterize the viewport (center, half-width) to (3, res, res) floats."""
    res = cfg.resolution
    u = (np.arange(res) + 0.5) / res
    X = (center[0] - half) + u[None, :] * 2 * half
    Y = (center[1] + half) - u[:, None] * 2 * half  # row 0 at the top
    img = np.empty((res, res, 3))
    img[:] = cfg.bg

    def paint(mask, color):
        img[mask] = color

    # target zone outline
    zx, zy = ZONE_CENTER
    border = 0.015
    outer = _rect(X, Y, zx, zy, ZONE_HALF, ZONE_HALF)
    inner = _rect(X, Y, zx, zy, ZONE_HALF - border, ZONE_HALF - border)
    paint(outer & ~inner, (0.80, 0.78, 0.70))

    # drawer cabinet along the top edge with a sliding tray
    paint(_rect(X, Y, DRAWER_X, 0.97, 0.18, 0.03), (0.30, 0.20, 0.12))
    tray_top = 0.94
    tray_bottom = HANDLE_Y_CLOSED - DRAWER_TRAVEL * state.drawer_ext
    paint(_rect(X, Y, DRAWER_X, (tray_top + tray_bottom) / 2, 0.15, (tray_top - tray_bottom) / 2), (0.55, 0.40, 0.22))
    hp = handle_pos(state)
    paint(_rect(X, Y, hp[0], hp[1], 0.045, 0.012), (0.12, 0.10, 0.08))

    # lamp doubles as the toggle button
    lamp_color = (0.98, 0.88, 0.15) if state.light_on else (0.22, 0.22, 0.24)
    paint(_disc(X, Y, state.lamp_pos[0], state.lamp_pos[1], 0.045), lamp_color)

    # blocks
    for i, name in enumerate(("red", "green", "blue")):
        bx, by = state.blocks[i]
        paint(_rect(X, Y, bx, by, BLOCK_HALF, BLOCK_HALF), BLOCK_COLORS[name])

    # gripper on top: hollow when open, filled when closed
    gx, gy = state.gripper
    outer = _rect(X, Y, gx, gy, 0.024, 0.024)
    if state.grip_closed:
        paint(outer, (0.96, 0.96, 0.96))
    else:
        inner = _rect(X, Y, gx, gy, 0.013, 0.013)
        paint(outer & ~inner, (0.96, 0.96, 0.96))

    out = img.transpose(2, 0, 1)
    if cfg.hue_shift or cfg.value_scale != 1.0:
        out = shift_hsv(out, dh=cfg.hue_shift, v_scale=cfg.value_scale)
    return out


def render_views(state: WorldState, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """(2, 3, res, res): static table view then gripper crop."""
    static = render_view(state, (0.5, 0.5), 0.5, cfg)
    gripper = render_view(state, tuple(state.gripper), GRIPPER_VIEW_HALF, cfg)
    return np.stack([static, gripper])


def observe_u8(state: WorldState, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Quantized camera frames as stored in datasets and fed to policies."""
    return np.round(render_views(state, cfg) * 255.0).astype(np.uint8)
