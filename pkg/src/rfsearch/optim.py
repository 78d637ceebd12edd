"""Parameter storage and the two optimizers the search protocol uses."""

from __future__ import annotations

from typing import Iterator, Tuple

import numpy as np

from .errors import MissingGrad, ShapeMismatch
from .tensor import Tensor


class ParamStore:
    """Named map from parameter id to Tensor plus per-parameter optimizer state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self._state: dict[str, dict] = {}
        self.step_count = 0

    def register(self, name: str, t: Tensor) -> Tensor:
        if name in self.params:
            raise ShapeMismatch(f"parameter '{name}' already registered")
        t.requires_grad = True
        self.params[name] = t
        self._state[name] = {}
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def param_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def state_dict(self) -> dict:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        for name, arr in state.items():
            self.params[name].data = arr.copy()

    def _grad(self, name: str) -> np.ndarray:
        t = self.params[name]
        if t.grad is None:
            raise MissingGrad(f"parameter '{name}' has no gradient")
        return t.grad


def sgd_step(store: ParamStore, lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> None:
    """Momentum SGD: v <- momentum*v + (grad + wd*w); w <- w - lr*v."""
    for name, t in store.items():
        g = store._grad(name) + weight_decay * t.data
        st = store._state[name]
        v = st.get("momentum")
        if v is None:
            v = np.zeros_like(t.data)
        v = momentum * v + g
        st["momentum"] = v
        t.data = t.data - lr * v
    store.step_count += 1


def adam_step(
    store: ParamStore,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    weight_decay: float = 0.0,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam with coupled L2 (decay added to the gradient)."""
    if eps <= 0:
        raise ShapeMismatch(f"adam eps must be positive, got {eps}")
    b1, b2 = betas
    for name, t in store.items():
        g = store._grad(name) + weight_decay * t.data
        st = store._state[name]
        m = st.get("m")
        if m is None:
            m = np.zeros_like(t.data)
            st["v"] = np.zeros_like(t.data)
            st["t"] = 0
        v = st["v"]
        st["t"] += 1
        k = st["t"]
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        st["m"], st["v"] = m, v
        mhat = m / (1 - b1**k)
        vhat = v / (1 - b2**k)
        t.data = t.data - lr * mhat / (np.sqrt(vhat) + eps)
    store.step_count += 1
