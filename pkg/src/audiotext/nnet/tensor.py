"""Tensor: an ndarray with an optional same-shape gradient buffer."""

from __future__ import annotations

import numpy as np


class Tensor:
    """Value plus gradient slot. Layers accumulate into ``grad`` in place."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} != value shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


# Ordered name -> Tensor mapping; insertion order is the canonical
# parameter order used for init draws and checkpoint payloads.
Params = dict[str, Tensor]


def zero_grads(params: Params) -> None:
    for t in params.values():
        t.zero_grad()


def clone_params(params: Params) -> Params:
    """Deep copy of values (grads not copied)."""
    return {name: Tensor(t.data.copy()) for name, t in params.items()}
