"""Named parameter collections with deterministic iteration order."""

from __future__ import annotations

from typing import Callable, Iterator, Mapping

import numpy as np

from ovdet.errors import ConfigError
from ovdet.nn.tensor import Tensor


class ParamStore:
    """Map from hierarchical name (dot-separated) to a trainable Tensor.

    Iteration is always sorted by name so optimizer updates, checkpoints,
    and gradient norms are order-stable across runs.
    """

    def __init__(self, params: Mapping[str, Tensor] | None = None, version: str = "1"):
        self._params: dict[str, Tensor] = {}
        self.version = version
        if params:
            for name, t in params.items():
                self[name] = t

    def __setitem__(self, name: str, tensor: Tensor):
        if not isinstance(tensor, Tensor):
            tensor = Tensor(np.asarray(tensor), requires_grad=True)
        self._params[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def subset(self, predicate: Callable[[str], bool]) -> "ParamStore":
        """View over matching entries; tensors are shared, not copied."""
        sub = ParamStore(version=self.version)
        for name, t in self.items():
            if predicate(name):
                sub._params[name] = t
        return sub

    def copy(self) -> "ParamStore":
        out = ParamStore(version=self.version)
        for name, t in self.items():
            out[name] = Tensor(t.data.copy(), requires_grad=t.requires_grad)
        return out

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(version=self.version)
        for name, t in self.items():
            out[name] = Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
        return out

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Snapshot current gradients (zeros where a parameter has none)."""
        return {
            name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
            for name, t in self.items()
        }

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())


def check_same_keys(params: ParamStore, grads: Mapping[str, np.ndarray]):
    if set(params.names()) != set(grads):
        missing = set(params.names()) ^ set(grads)
        raise ConfigError(f"parameter/gradient key mismatch: {sorted(missing)[:5]}")
