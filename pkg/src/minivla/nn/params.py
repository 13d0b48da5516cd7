"""Named parameter collection with per-parameter freeze flags."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["ParameterSet"]


class ParameterSet:
    """Ordered map from hierarchical names to tensors.

    Frozen parameters stop collecting gradients and are never touched by an
    optimizer step. Names are unique; insertion order is the serialization
    order.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._frozen: dict[str, bool] = {}

    def add(self, name: str, value, dtype=None) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = value if isinstance(value, Tensor) else Tensor(np.asarray(value), dtype=dtype)
        t.requires_grad = True
        self._params[name] = t
        self._frozen[name] = False
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def is_frozen(self, name: str) -> bool:
        return self._frozen[name]

    def freeze_prefixes(self, prefixes) -> None:
        """Freeze every parameter whose name starts with one of ``prefixes``;
        unfreeze the rest."""
        prefixes = tuple(prefixes)
        for name, t in self._params.items():
            frozen = name.startswith(prefixes) if prefixes else False
            self._frozen[name] = frozen
            t.requires_grad = not frozen
            if frozen:
                t.grad = None

    def unfreeze_all(self) -> None:
        self.freeze_prefixes(())

    def frozen_names(self) -> list[str]:
        return [n for n, f in self._frozen.items() if f]

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def astype(self, dtype) -> "ParameterSet":
        """Copy with all values cast to ``dtype`` (freeze flags preserved)."""
        out = ParameterSet()
        for name, t in self._params.items():
            out.add(name, t.data.astype(dtype))
            out._frozen[name] = self._frozen[name]
            out._params[name].requires_grad = not self._frozen[name]
        return out

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for name, t in self._params.items():
            out.add(name, t.data.copy())
            out._frozen[name] = self._frozen[name]
            out._params[name].requires_grad = not self._frozen[name]
        return out

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())
