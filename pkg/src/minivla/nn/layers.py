"""The layer kinds the model is built from.

All functions accept arbitrary leading batch axes and record on the
autodiff tape. ``attention_forward`` is single-head scaled dot-product
attention; multi-head wrappers live in :mod:`minivla.nn.blocks`.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

__all__ = ["linear_forward", "conv1d_forward", "attention_forward"]


def linear_forward(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """out[.., j] = sum_k x[.., k] * w[k, j] (+ b[j])."""
    xs, ws = np.shape(x.data if isinstance(x, Tensor) else x), w.data.shape
    if xs[-1] != ws[0]:
        raise ShapeError(f"linear: input {xs} incompatible with weight {ws}")
    out = ad.matmul(x, w)
    if b is not None:
        out = ad.add(out, b)
    return out


def conv1d_forward(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Temporal cross-correlation; see :func:`minivla.nn.autodiff.conv1d`."""
    return ad.conv1d(x, kernels, bias=bias, stride=stride, padding=padding)


def attention_forward(q: Tensor, k: Tensor, v: Tensor, keep=None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v with an optional boolean key mask.

    q is (..., n_q, d), k and v are (..., n_k, d); ``keep`` marks visible
    keys (broadcastable to (..., n_k)). Masked keys get exactly zero
    attention weight; a query with every key masked is rejected.
    """
    qs, ks, vs = q.data.shape, k.data.shape, v.data.shape
    if qs[-1] != ks[-1]:
        raise ShapeError(f"attention: query width {qs} vs key width {ks}")
    if ks[-2] != vs[-2]:
        raise ShapeError(f"attention: key count {ks} vs value count {vs}")
    d = qs[-1]
    scores = ad.mul(ad.matmul(q, ad.transpose(k, _swap_last(k.ndim))), 1.0 / np.sqrt(d))
    if keep is not None:
        keep = np.asarray(keep, dtype=bool)
        if keep.shape[-1] != ks[-2]:
            raise ShapeError(f"attention: mask length {keep.shape[-1]} vs key count {ks[-2]}")
        keep = keep.reshape(keep.shape[:-1] + (1,) * (scores.ndim - keep.ndim) + (keep.shape[-1],))
    weights = ad.softmax(scores, keep=keep)
    return ad.matmul(weights, v)


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)
