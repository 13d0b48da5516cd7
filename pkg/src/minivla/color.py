"""RGB/HSV conversion for channel-first float images in [0, 1]."""

from __future__ import annotations

import numpy as np

__all__ = ["rgb_to_hsv", "hsv_to_rgb", "shift_hsv"]


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    """(3, H, W) RGB in [0,1] -> (3, H, W) HSV with hue in [0,1)."""
    r, g, b = img[0], img[1], img[2]
    maxc = img.max(axis=0)
    minc = img.min(axis=0)
    delta = maxc - minc
    h = np.zeros_like(maxc)
    nz = delta > 0
    dr = np.where(nz, (maxc - r) / np.where(nz, delta, 1.0), 0.0)
    dg = np.where(nz, (maxc - g) / np.where(nz, delta, 1.0), 0.0)
    db = np.where(nz, (maxc - b) / np.where(nz, delta, 1.0), 0.0)
    h = np.where(maxc == r, db - dg, h)
    h = np.where((maxc == g) & nz, 2.0 + dr - db, h)
    h = np.where((maxc == b) & nz, 4.0 + dg - dr, h)
    h = (h / 6.0) % 1.0
    h = np.where(nz, h, 0.0)
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    return np.stack([h, s, maxc])


def hsv_to_rgb(img: np.ndarray) -> np.ndarray:
    """(3, H, W) HSV -> (3, H, W) RGB, all in [0,1]."""
    h, s, v = img[0], img[1], img[2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def shift_hsv(img: np.ndarray, dh: float = 0.0, s_scale: float = 1.0, v_scale: float = 1.0) -> np.ndarray:
    """Apply a hue rotation and saturation/value scaling, clamped to [0,1]."""
    hsv = rgb_to_hsv(img)
    hsv[0] = (hsv[0] + dh) % 1.0
    hsv[1] = np.clip(hsv[1] * s_scale, 0.0, 1.0)
    hsv[2] = np.clip(hsv[2] * v_scale, 0.0, 1.0)
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
