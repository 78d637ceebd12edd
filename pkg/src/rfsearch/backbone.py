"""Micro residual backbone with attention blocks at the end of each stage.

All attention blocks share one spatial structure (alpha or genotype); their
learned channel weights are per-stage.  Weight init streams are named per
layer, so the baseline (no attention) and attention variants draw identical
backbone weights for the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import primitives as P
from .attention import AttentionConfig, MixedEdgeParams, RFAttention, _uniform_init
from .errors import ShapeMismatch
from .genotype import Genotype
from .ops import DISABLED_NOISE, NoiseConfig
from .optim import ParamStore
from .rng import stream
from .tensor import Tape, Tensor


@dataclass
class BackboneSpec:
    stages: Tuple[Tuple[int, int], ...] = ((8, 1), (16, 1), (32, 1))
    in_channels: int = 1
    n_classes: int = 4


class _ResBlock:
    def __init__(self, store: ParamStore, seed: int, name: str, c_in: int, c_out: int, stride: int):
        self.stride = stride
        self.c_in, self.c_out = c_in, c_out

        def init(suffix, shape, fan_in):
            return store.register(
                f"{name}.{suffix}", Tensor(_uniform_init(stream(seed, "init", f"{name}.{suffix}"), shape, fan_in))
            )

        self.conv1 = init("conv1", (c_out, c_in, 3, 3), c_in * 9)
        self.conv2 = init("conv2", (c_out, c_out, 3, 3), c_out * 9)
        if stride != 1 or c_in != c_out:
            self.shortcut = init("shortcut", (c_out, c_in, 1, 1), c_in)
        else:
            self.shortcut = None

    def forward(self, tape: Tape, x: Tensor) -> Tensor:
        h = P.relu(tape, P.conv2d(tape, x, self.conv1, stride=self.stride))
        h = P.conv2d(tape, h, self.conv2)
        skip = x if self.shortcut is None else P.conv2d(tape, x, self.shortcut, stride=self.stride)
        return P.relu(tape, P.add(tape, h, skip))


class Backbone:
    """Stem conv, residual stages, optional attention per stage, GAP + FC head."""

    def __init__(
        self,
        spec: BackboneSpec,
        attn_cfg: Optional[AttentionConfig] = None,
        seed: int = 0,
        with_attention: bool = False,
    ):
        self.spec = spec
        self.attn_cfg = attn_cfg if with_attention else None
        self.with_attention = with_attention
        if with_attention and attn_cfg is None:
            raise ShapeMismatch("with_attention requires an AttentionConfig")
        self.store = ParamStore()
        c0 = spec.stages[0][0]
        self.stem = self.store.register(
            "stem", Tensor(_uniform_init(stream(seed, "init", "stem"), (c0, spec.in_channels, 3, 3), spec.in_channels * 9))
        )
        self.blocks: List[List[_ResBlock]] = []
        self.attn: List[Optional[RFAttention]] = []
        c_in = c0
        for si, (c_out, n_blocks) in enumerate(spec.stages):
            stage = []
            for bi in range(n_blocks):
                stride = 2 if (si > 0 and bi == 0) else 1
                stage.append(_ResBlock(self.store, seed, f"s{si}.b{bi}", c_in, c_out, stride))
                c_in = c_out
            self.blocks.append(stage)
            if with_attention:
                self.attn.append(
                    RFAttention(c_out, attn_cfg, self.store, stream(seed, "init", f"attn{si}"), name=f"attn{si}")
                )
            else:
                self.attn.append(None)
        self.fc_w = self.store.register(
            "fc.w", Tensor(_uniform_init(stream(seed, "init", "fc.w"), (spec.n_classes, c_in, 1, 1), c_in))
        )
        self.fc_b = self.store.register(
            "fc.b", Tensor(np.zeros((1, spec.n_classes, 1, 1), dtype=np.float32))
        )

    def forward(
        self,
        tape: Tape,
        x: Tensor,
        params: Optional[MixedEdgeParams] = None,
        genotype: Optional[Genotype] = None,
        noise: NoiseConfig = DISABLED_NOISE,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Return class logits (N, n_classes, 1, 1)."""
        h = P.relu(tape, P.conv2d(tape, x, self.stem))
        for stage, attn in zip(self.blocks, self.attn):
            for block in stage:
                h = block.forward(tape, h)
            if attn is not None:
                h = attn.forward(tape, h, params=params, genotype=genotype, noise=noise, rng=rng)
        z = P.global_avg_pool(tape, h)
        return P.fc(tape, z, self.fc_w, self.fc_b)

    def param_count(self) -> int:
        return self.store.param_count()
