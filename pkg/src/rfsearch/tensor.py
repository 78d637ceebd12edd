"""Dense rank-4 tensors and the reverse-mode tape.

Tensors are (batch, channel, height, width) arrays, float32 by default.
Primitives record their backward closures on an explicit Tape; one call to
`backward` propagates a scalar loss to every requires_grad leaf that was
used on that tape.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DetachedLoss, NonFinite, NonScalarLoss, ShapeMismatch

DEFAULT_DTYPE = np.float32


class Tensor:
    """A rank-4 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim != 4:
            raise ShapeMismatch(f"tensors are rank-4 (N,C,H,W), got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeMismatch(f"grad shape {g.shape} != data shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g.astype(self.data.dtype, copy=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


class TapeEntry:
    __slots__ = ("kind", "inputs", "output", "backward_fn")

    def __init__(self, kind, inputs, output, backward_fn):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Topologically ordered record of primitive applications.

    `strict` turns on NaN/Inf detection on every recorded output.
    """

    def __init__(self, strict: bool = True):
        self.strict = strict
        self.entries: list[TapeEntry] = []
        self._outputs: set[int] = set()

    def record(
        self,
        kind: str,
        inputs: Sequence[Tensor],
        output: Tensor,
        backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    ) -> Tensor:
        if self.strict and not np.all(np.isfinite(output.data)):
            raise NonFinite(f"non-finite values in output of primitive '{kind}'")
        self.entries.append(TapeEntry(kind, tuple(inputs), output, backward_fn))
        self._outputs.add(id(output))
        return output

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._outputs


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate .grad of every requires_grad leaf reachable from `loss`.

    Leaves that were used on the tape but are unreachable from the loss get a
    zero gradient.  Gradients accumulate into existing buffers; call
    zero_grad first for a fresh pass.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if not tape.produced(loss):
        raise DetachedLoss("loss was not produced on this tape")

    # A tensor needs a gradient if it is (or depends on) a requires_grad leaf.
    needs: set[int] = set()
    for entry in tape.entries:
        if any(t.requires_grad or id(t) in needs for t in entry.inputs):
            needs.add(id(entry.output))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for entry in reversed(tape.entries):
        for t in entry.inputs:
            if t.requires_grad and not tape.produced(t):
                leaves[id(t)] = t
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        in_grads = entry.backward_fn(g)
        for t, ig in zip(entry.inputs, in_grads):
            if ig is None or not (t.requires_grad or id(t) in needs):
                continue
            ig = np.asarray(ig, dtype=t.data.dtype)
            if id(t) in grads:
                grads[id(t)] = grads[id(t)] + ig
            else:
                grads[id(t)] = ig

    for tid, t in leaves.items():
        t.accumulate_grad(grads.get(tid, np.zeros_like(t.data)))
