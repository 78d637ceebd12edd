"""The receptive-field attention block.

A block is: learned 1x1 channel-reducing conv, a pooling DAG over the
reduced maps (relaxed mixture during search, discrete genotype afterwards),
a learned 1x1 expand conv back to C channels, a squeeze-excite gate on the
expanded maps, and a residual attachment to the block input.  The expand
conv is zero-initialized so a freshly inserted block is an exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from . import primitives as P
from .errors import EdgeCountMismatch, GenotypeMismatch, NonFiniteAlpha, ShapeMismatch
from .genotype import Genotype, edge_pairs
from .ops import ALL_OPS, DISABLED_NOISE, NoiseConfig, OpKind, apply_candidate
from .optim import ParamStore
from .tensor import Tape, Tensor


@dataclass
class AttentionConfig:
    """Topology of the block: DAG size and channel reduction ratios."""

    n_nodes: int = 4
    r_spatial: int = 4
    r_channel: int = 16
    candidate_set: Tuple[OpKind, ...] = field(default_factory=lambda: ALL_OPS)

    @property
    def n_edges(self) -> int:
        return self.n_nodes * (self.n_nodes - 1) // 2

    @property
    def n_candidates(self) -> int:
        return len(self.candidate_set)


class MixedEdgeParams:
    """Architecture parameters alpha, one row per DAG edge.

    Stored as an (edges, M, 1, 1) tensor so the channel softmax primitive
    yields per-edge mixture weights.  Initialized to zero (uniform mixture).
    """

    def __init__(self, cfg: AttentionConfig, dtype=np.float32):
        self.cfg = cfg
        self.alpha = Tensor(
            np.zeros((cfg.n_edges, cfg.n_candidates, 1, 1), dtype=dtype), requires_grad=True
        )

    @property
    def matrix(self) -> np.ndarray:
        return self.alpha.data.reshape(self.cfg.n_edges, self.cfg.n_candidates)

    def register(self, store: ParamStore, name: str = "alpha") -> None:
        store.register(name, self.alpha)


def _uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class RFAttention:
    """One attention block built for a fixed channel width."""

    def __init__(
        self,
        channels: int,
        cfg: AttentionConfig,
        store: ParamStore,
        rng: np.random.Generator,
        name: str = "attn",
    ):
        self.channels = channels
        self.cfg = cfg
        self.name = name
        c_red = max(channels // cfg.r_spatial, 1)
        c_hidden = max(channels // cfg.r_channel, 1)
        self.c_red = c_red
        self.w_reduce = store.register(
            f"{name}.reduce", Tensor(_uniform_init(rng, (c_red, channels, 1, 1), channels))
        )
        self.w_expand = store.register(
            f"{name}.expand", Tensor(np.zeros((channels, c_red, 1, 1), dtype=np.float32))
        )
        self.w_se1 = store.register(
            f"{name}.se1", Tensor(_uniform_init(rng, (c_hidden, channels, 1, 1), channels))
        )
        self.w_se2 = store.register(
            f"{name}.se2", Tensor(_uniform_init(rng, (channels, c_hidden, 1, 1), c_hidden))
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
        """Residual attention: x + rescale(expand(dag(reduce(x)))).

        Exactly one of `params` (relaxed mode) / `genotype` (discrete mode)
        must be given.
        """
        if (params is None) == (genotype is None):
            raise ShapeMismatch("pass exactly one of params (relaxed) or genotype (discrete)")
        if x.shape[1] != self.channels:
            raise ShapeMismatch(f"block built for {self.channels} channels, got {x.shape[1]}")
        xr = P.conv2d(tape, x, self.w_reduce)
        if params is not None:
            h = spatial_forward_relaxed(tape, xr, params, self.cfg, noise, rng)
        else:
            h = spatial_forward_discrete(tape, xr, genotype, self.cfg)
        u = P.conv2d(tape, h, self.w_expand)
        s = excite(tape, squeeze(tape, u), self.w_se1, self.w_se2)
        ut = rescale(tape, u, s)
        return P.add(tape, x, ut)


def spatial_forward_relaxed(
    tape: Tape,
    x_reduced: Tensor,
    params: MixedEdgeParams,
    cfg: AttentionConfig,
    noise: NoiseConfig = DISABLED_NOISE,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """DAG forward with softmax-relaxed mixtures on every edge."""
    if params.alpha.shape[0] != cfg.n_edges or params.alpha.shape[1] != cfg.n_candidates:
        raise EdgeCountMismatch(
            f"alpha shape {params.alpha.shape[:2]} != ({cfg.n_edges}, {cfg.n_candidates})"
        )
    weights = P.softmax_channels(tape, params.alpha)
    nodes: List[Tensor] = [x_reduced]
    cache: dict[tuple[int, OpKind], Tensor] = {}

    def candidate(src: int, kind: OpKind) -> Tensor:
        # noisy identity draws fresh noise per edge; everything else is shared
        if kind == OpKind.NoisyIdentity and noise.enabled:
            return apply_candidate(tape, kind, nodes[src], noise, rng)
        key = (src, kind)
        if key not in cache:
            cache[key] = apply_candidate(tape, kind, nodes[src], noise, rng)
        return cache[key]

    e = 0
    for j in range(1, cfg.n_nodes):
        acc: Optional[Tensor] = None
        for i in range(j):
            for m, kind in enumerate(cfg.candidate_set):
                term = P.scale(tape, candidate(i, kind), weights, element=(e, m, 0, 0))
                acc = term if acc is None else P.add(tape, acc, term)
            e += 1
        nodes.append(acc)
    out = nodes[1]
    for node in nodes[2:]:
        out = P.add(tape, out, node)
    return out


def spatial_forward_discrete(
    tape: Tape, x_reduced: Tensor, genotype: Genotype, cfg: AttentionConfig
) -> Tensor:
    """DAG forward applying exactly the genotype's op on every edge (noise off)."""
    if genotype.n_nodes != cfg.n_nodes:
        raise GenotypeMismatch(
            f"genotype has {genotype.n_nodes} nodes, config expects {cfg.n_nodes}"
        )
    nodes: List[Tensor] = [x_reduced]
    for j in range(1, cfg.n_nodes):
        acc: Optional[Tensor] = None
        for i in range(j):
            y = apply_candidate(tape, genotype.op_for(i, j), nodes[i])
            acc = y if acc is None else P.add(tape, acc, y)
        nodes.append(acc)
    out = nodes[1]
    for node in nodes[2:]:
        out = P.add(tape, out, node)
    return out


def squeeze(tape: Tape, u: Tensor) -> Tensor:
    """Per-sample per-channel spatial mean: (N,C,H,W) -> (N,C,1,1)."""
    return P.global_avg_pool(tape, u)


def excite(tape: Tape, z: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """Two-layer bottleneck gate: sigmoid(W2 relu(W1 z)), values in (0,1)."""
    return P.sigmoid(tape, P.fc(tape, P.relu(tape, P.fc(tape, z, w1)), w2))


def rescale(tape: Tape, u: Tensor, s: Tensor) -> Tensor:
    """Multiply each channel plane by its gate."""
    return P.channel_mul(tape, u, s)


def discretize(params: MixedEdgeParams) -> Genotype:
    """Per-edge argmax over alpha; ties go to the lowest canonical index."""
    a = params.matrix
    if not np.all(np.isfinite(a)):
        raise NonFiniteAlpha("alpha contains NaN/Inf")
    picks = a.argmax(axis=1)
    cfg = params.cfg
    edges = [
        (i, j, cfg.candidate_set[picks[e]])
        for e, (i, j) in enumerate(edge_pairs(cfg.n_nodes))
    ]
    return Genotype(n_nodes=cfg.n_nodes, edges=edges, candidate_set=cfg.candidate_set)


def count_search_space(m: int, n: int) -> int:
    """Number of discrete structures: M ** (N(N-1)/2), exact."""
    if m < 1 or n < 2:
        raise ShapeMismatch(f"need M >= 1 and N >= 2, got M={m}, N={n}")
    return m ** (n * (n - 1) // 2)


def count_skip_connections(obj: Union[MixedEdgeParams, Genotype]) -> int:
    """Edges whose (current argmax) operation is the noisy identity."""
    if isinstance(obj, Genotype):
        return sum(1 for _, _, op in obj.edges if op == OpKind.NoisyIdentity)
    geno = discretize(obj)
    return count_skip_connections(geno)


def mean_skip_connections(objs) -> float:
    """Mean skip count over a set of runs (alphas or genotypes)."""
    counts = [count_skip_connections(o) for o in objs]
    return float(np.mean(counts)) if counts else 0.0
