"""The nine parameter-free candidate operations of the search space.

Every candidate is stride-1 and preserves the spatial resolution, so any
composition along the DAG keeps the feature map shape.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import primitives as P
from .errors import NegativeSigma
from .tensor import Tape, Tensor


class OpKind(enum.IntEnum):
    """Candidate operations in canonical index order."""

    MaxPool3 = 0
    MaxPool5 = 1
    MaxPool7 = 2
    AvgPool3 = 3
    AvgPool5 = 4
    AvgPool7 = 5
    StripPool = 6
    NoisyIdentity = 7
    Zero = 8


OP_NAMES = {
    OpKind.MaxPool3: "max3",
    OpKind.MaxPool5: "max5",
    OpKind.MaxPool7: "max7",
    OpKind.AvgPool3: "avg3",
    OpKind.AvgPool5: "avg5",
    OpKind.AvgPool7: "avg7",
    OpKind.StripPool: "strip",
    OpKind.NoisyIdentity: "noisy_id",
    OpKind.Zero: "zero",
}
OPS_BY_NAME = {v: k for k, v in OP_NAMES.items()}
ALL_OPS = tuple(OpKind)

_KERNELS = {
    OpKind.MaxPool3: 3,
    OpKind.MaxPool5: 5,
    OpKind.MaxPool7: 7,
    OpKind.AvgPool3: 3,
    OpKind.AvgPool5: 5,
    OpKind.AvgPool7: 7,
}


@dataclass
class NoiseConfig:
    """Gaussian noise for the identity candidate; enabled during search only."""

    mu: float = 0.0
    sigma: float = 0.0
    enabled: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise NegativeSigma(f"noise sigma must be >= 0, got {self.sigma}")


DISABLED_NOISE = NoiseConfig()


def max_pool_same(tape: Tape, x: Tensor, k: int) -> Tensor:
    return P.max_pool_same(tape, x, k)


def avg_pool_same(tape: Tape, x: Tensor, k: int) -> Tensor:
    return P.avg_pool_same(tape, x, k)


def strip_pool(tape: Tape, x: Tensor) -> Tensor:
    """Parameter-free strip pooling: out(i,j) = (row_mean_i + col_mean_j) / 2."""
    yh = P.row_mean(tape, x)
    yv = P.col_mean(tape, x)
    return P.scale(tape, P.add(tape, yh, yv), 0.5)


def noisy_identity(tape: Tape, x: Tensor, cfg: NoiseConfig, rng: Optional[np.random.Generator]) -> Tensor:
    """Identity plus i.i.d. Gaussian noise when enabled; exact identity otherwise.

    The noise draw is treated as a constant in backward, so gradients pass
    through unchanged.
    """
    if cfg.sigma < 0:
        raise NegativeSigma(f"noise sigma must be >= 0, got {cfg.sigma}")
    if cfg.enabled and (cfg.sigma > 0 or cfg.mu != 0):
        if rng is None:
            raise NegativeSigma("noisy identity with noise enabled needs an rng stream")
        z = rng.normal(cfg.mu, cfg.sigma, size=x.shape).astype(x.dtype)
    else:
        z = None
    out = x.data if z is None else x.data + z

    def bwd(g):
        return (g,)

    return tape.record("noisy_identity", (x,), Tensor(out.copy()), bwd)


def zero_op(tape: Tape, x: Tensor) -> Tensor:
    """All-zeros output; kills both the signal and the upstream gradient."""
    return P.scale(tape, x, 0.0)


def apply_candidate(
    tape: Tape,
    kind: OpKind,
    x: Tensor,
    noise: NoiseConfig = DISABLED_NOISE,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Dispatch a candidate operation; output shape always equals input shape."""
    if kind in _KERNELS:
        if kind <= OpKind.MaxPool7:
            return max_pool_same(tape, x, _KERNELS[kind])
        return avg_pool_same(tape, x, _KERNELS[kind])
    if kind == OpKind.StripPool:
        return strip_pool(tape, x)
    if kind == OpKind.NoisyIdentity:
        return noisy_identity(tape, x, noise, rng)
    if kind == OpKind.Zero:
        return zero_op(tape, x)
    raise ValueError(f"unknown candidate kind {kind!r}")
