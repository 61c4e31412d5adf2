from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from .core import Tensor

__all__ = ["ParamStore"]


class ParamStore(Mapping):
    """Named trainable tensors plus their Adam moments.

    Names are unique and a parameter's shape never changes after creation.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=self.dtype)
        t = Tensor(arr, requires_grad=True, name=name)
        self._params[name] = t
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return t

    def assign(self, name: str, value) -> None:
        t = self._params[name]
        arr = np.asarray(value, dtype=self.dtype)
        if arr.shape != t.shape:
            raise ValueError(f"shape of {name!r} is fixed at {t.shape}, got {arr.shape}")
        t.value = arr.copy()

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.value for k, t in self._params.items()}

    def num_values(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore(self.dtype)
        for k, t in self._params.items():
            out.add(k, t.value)
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
        out.step = self.step
        return out
