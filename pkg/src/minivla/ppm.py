"""Binary PPM (P6) raster dumps for previews and demos."""

from __future__ import annotations

import numpy as np

__all__ = ["write_ppm"]


def write_ppm(path: str, img: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] (or uint8) as binary P6."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    c, h, w = img.shape
    if c != 3:
        raise ValueError(f"expected (3, H, W), got {img.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.transpose(1, 2, 0).tobytes())
