"""Receptive-field analysis: analytical propagation and empirical measurement.

Two independent computations are compared:

* `theoretical_rf` pushes support descriptors (box / cross / empty / global)
  through a genotype's DAG.
* empirically, `compute_erf` backprojects a unit gradient from one output
  position, and `dependency_support` probes each input pixel with a large
  perturbation.  Gradient support is always a subset of the true dependency
  region (max pooling routes gradient to window argmaxes only), so the
  containment check uses gradients and the equality check for box-only
  genotypes uses the perturbation probe.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import primitives as P
from .attention import AttentionConfig, spatial_forward_discrete
from .errors import InvalidGenotype, OutOfBoundsPosition, ZeroMass
from .genotype import Genotype
from .ops import OpKind
from .rng import stream
from .tensor import Tape, Tensor, backward

_POOL_KERNEL = {
    OpKind.MaxPool3: 3,
    OpKind.MaxPool5: 5,
    OpKind.MaxPool7: 7,
    OpKind.AvgPool3: 3,
    OpKind.AvgPool5: 5,
    OpKind.AvgPool7: 7,
}

BOX_ONLY_OPS = frozenset(
    [
        OpKind.MaxPool3,
        OpKind.MaxPool5,
        OpKind.MaxPool7,
        OpKind.AvgPool3,
        OpKind.AvgPool5,
        OpKind.AvgPool7,
        OpKind.NoisyIdentity,
        OpKind.Zero,
    ]
)


@dataclass(frozen=True)
class RFSupport:
    """Support of one DAG node relative to a centered output pixel.

    box: centered rh x rw rectangle.  cross: full-width horizontal band of
    height rh union full-height vertical band of width rw.  Extents are odd.
    """

    kind: str  # "empty" | "box" | "cross" | "global"
    rh: int = 0
    rw: int = 0

    def describe(self) -> str:
        if self.kind in ("box", "cross"):
            return f"{self.kind}({self.rh},{self.rw})"
        return self.kind


EMPTY = RFSupport("empty")
GLOBAL = RFSupport("global")


def _apply_op(op: OpKind, s: RFSupport) -> RFSupport:
    if s.kind == "empty" or op == OpKind.Zero:
        return EMPTY
    if op == OpKind.NoisyIdentity:
        return s
    if op in _POOL_KERNEL:
        k = _POOL_KERNEL[op]
        if s.kind == "global":
            return GLOBAL
        return RFSupport(s.kind, s.rh + k - 1, s.rw + k - 1)
    if op == OpKind.StripPool:
        if s.kind == "box":
            return RFSupport("cross", s.rh, s.rw)
        return GLOBAL  # strip of a cross (or global) reaches everything
    raise InvalidGenotype(f"unknown op {op!r}")


def _union(a: RFSupport, b: RFSupport) -> RFSupport:
    if a.kind == "empty":
        return b
    if b.kind == "empty":
        return a
    if a.kind == "global" or b.kind == "global":
        return GLOBAL
    if a.kind == "box" and b.kind == "box":
        return RFSupport("box", max(a.rh, b.rh), max(a.rw, b.rw))
    # at least one cross: conservative bounding cross (soundness-preserving)
    return RFSupport("cross", max(a.rh, b.rh), max(a.rw, b.rw))


@dataclass
class RFProfile:
    """Per-node support descriptors plus the DAG output support."""

    n_nodes: int
    input_hw: Tuple[int, int]
    nodes: List[RFSupport]
    output: RFSupport

    def describe(self) -> str:
        lines = [
            "format = rfsearch-rf-profile",
            "version = 1",
            f"n_nodes = {self.n_nodes}",
            f"input_hw = {self.input_hw[0]}x{self.input_hw[1]}",
        ]
        for idx, s in enumerate(self.nodes):
            lines.append(f"node {idx} = {s.describe()}")
        lines.append(f"output = {self.output.describe()}")
        return "\n".join(lines) + "\n"


def theoretical_rf(genotype: Genotype, input_hw: Tuple[int, int]) -> RFProfile:
    """Propagate support descriptors through the genotype's DAG."""
    nodes = [RFSupport("box", 1, 1)]
    for j in range(1, genotype.n_nodes):
        s = EMPTY
        for i in range(j):
            s = _union(s, _apply_op(genotype.op_for(i, j), nodes[i]))
        nodes.append(s)
    out = EMPTY
    for s in nodes[1:]:
        out = _union(out, s)
    return RFProfile(genotype.n_nodes, tuple(input_hw), nodes, out)


def rasterize(s: RFSupport, hw: Tuple[int, int], center: Tuple[int, int]) -> np.ndarray:
    """Boolean mask of the support on an H x W grid around `center`."""
    H, W = hw
    r, c = center
    mask = np.zeros((H, W), dtype=bool)
    if s.kind == "empty":
        return mask
    if s.kind == "global":
        mask[:] = True
        return mask
    ph, pw = (s.rh - 1) // 2, (s.rw - 1) // 2
    rows = slice(max(r - ph, 0), min(r + ph, H - 1) + 1)
    cols = slice(max(c - pw, 0), min(c + pw, W - 1) + 1)
    if s.kind == "box":
        mask[rows, cols] = True
    else:
        mask[rows, :] = True
        mask[:, cols] = True
    return mask


# ---------------------------------------------------------------------------
# empirical measurement


@dataclass
class ERFMap:
    """Absolute input-gradient magnitudes for a unit output perturbation."""

    grid: np.ndarray  # (H, W), non-negative
    center: Tuple[int, int]

    def support(self, tol: float = 0.0) -> np.ndarray:
        return self.grid > tol

    def to_pgm(self) -> str:
        """Plain-text P2 portable graymap, scaled to 0..65535 by the max."""
        H, W = self.grid.shape
        peak = float(self.grid.max())
        if peak > 0:
            scaled = np.rint(self.grid / peak * 65535).astype(np.int64)
        else:
            scaled = np.zeros((H, W), dtype=np.int64)
        buf = io.StringIO()
        buf.write(f"P2\n{W} {H}\n65535\n")
        for row in scaled:
            buf.write(" ".join(str(v) for v in row) + "\n")
        return buf.getvalue()

    def to_csv(self) -> str:
        lines = ["row,col,magnitude"]
        H, W = self.grid.shape
        for r in range(H):
            for c in range(W):
                lines.append(f"{r},{c},{self.grid[r, c]!r}")
        return "\n".join(lines) + "\n"


ForwardFn = Callable[[Tape, Tensor], Tensor]


def dag_forward_fn(genotype: Genotype) -> ForwardFn:
    """Forward of the bare spatial DAG (no reduce/expand/SE/residual)."""
    cfg = AttentionConfig(n_nodes=genotype.n_nodes, candidate_set=genotype.candidate_set)

    def forward(tape: Tape, x: Tensor) -> Tensor:
        return spatial_forward_discrete(tape, x, genotype, cfg)

    return forward


def compute_erf(
    forward: ForwardFn, x: Tensor, out_pos: Optional[Tuple[int, int, int]] = None
) -> ERFMap:
    """Backproject a unit gradient from (channel, row, col) of the output.

    Returns per-pixel input gradient magnitude summed over input channels and
    batch samples.  `out_pos` defaults to channel 0 at the spatial center.
    """
    xg = Tensor(x.data.copy(), requires_grad=True)
    tape = Tape()
    out = forward(tape, xg)
    _, C, H, W = out.shape
    if out_pos is None:
        out_pos = (0, H // 2, W // 2)
    c, r, col = out_pos
    if not (0 <= c < C and 0 <= r < H and 0 <= col < W):
        raise OutOfBoundsPosition(f"position {out_pos} outside output shape {out.shape}")
    mask = np.zeros(out.shape, dtype=out.dtype)
    mask[:, c, r, col] = 1.0
    loss = P.sum_masked(tape, out, mask)
    backward(tape, loss)
    grid = np.abs(xg.grad.astype(np.float64)).sum(axis=(0, 1))
    return ERFMap(grid=grid, center=(r, col))


def compute_erf_averaged(
    forward: ForwardFn,
    input_shape: Tuple[int, int, int, int],
    out_pos: Optional[Tuple[int, int, int]] = None,
    n_average: int = 16,
    seed: int = 0,
) -> ERFMap:
    """Mean ERF over `n_average` seeded random inputs."""
    total = None
    center = None
    for i in range(n_average):
        rng = stream(seed, "erf_input", str(i))
        x = Tensor(rng.standard_normal(input_shape).astype(np.float32))
        m = compute_erf(forward, x, out_pos)
        total = m.grid if total is None else total + m.grid
        center = m.center
    return ERFMap(grid=total / n_average, center=center)


def erf_radius(m: ERFMap, mass: float) -> int:
    """Smallest Chebyshev radius whose centered square holds >= `mass` fraction."""
    total = float(m.grid.sum())
    if total <= 0:
        raise ZeroMass("ERF map has zero total mass")
    H, W = m.grid.shape
    r0, c0 = m.center
    for radius in range(max(H, W)):
        rows = slice(max(r0 - radius, 0), min(r0 + radius, H - 1) + 1)
        cols = slice(max(c0 - radius, 0), min(c0 + radius, W - 1) + 1)
        if m.grid[rows, cols].sum() >= mass * total - 1e-12:
            return radius
    return max(H, W)


def dependency_support(
    forward: ForwardFn,
    x: Tensor,
    out_pos: Optional[Tuple[int, int, int]] = None,
    magnitude: float = 1e6,
    batch: int = 256,
) -> np.ndarray:
    """Which input pixels can change the output value at `out_pos`.

    Probes each pixel with a large additive perturbation; exact for the
    monotone pooling candidates regardless of argmax routing.
    """
    if x.shape[0] != 1:
        raise OutOfBoundsPosition("dependency probe expects a single-sample input")
    _, C, H, W = x.shape
    tape = Tape()
    out = forward(tape, x)
    if out_pos is None:
        out_pos = (0, out.shape[2] // 2, out.shape[3] // 2)
    c, r, col = out_pos
    if not (0 <= c < out.shape[1] and 0 <= r < out.shape[2] and 0 <= col < out.shape[3]):
        raise OutOfBoundsPosition(f"position {out_pos} outside output shape {out.shape}")
    base = float(out.data[0, c, r, col])

    support = np.zeros((H, W), dtype=bool)
    coords = [(i, j) for i in range(H) for j in range(W)]
    for start in range(0, len(coords), batch):
        chunk = coords[start : start + batch]
        xs = np.repeat(x.data, len(chunk), axis=0)
        for b, (i, j) in enumerate(chunk):
            xs[b, :, i, j] += magnitude
        t = Tape(strict=False)
        o = forward(t, Tensor(xs))
        vals = o.data[:, c, r, col]
        for b, (i, j) in enumerate(chunk):
            if vals[b] != base:
                support[i, j] = True
    return support


# ---------------------------------------------------------------------------
# oracle harness


@dataclass
class RFReport:
    genotype: Genotype
    trials: int
    containment_violations: int = 0
    equality_violations: int = 0
    box_only: bool = False
    details: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.containment_violations == 0 and self.equality_violations == 0


def is_box_only(genotype: Genotype) -> bool:
    return all(op in BOX_ONLY_OPS for _, _, op in genotype.edges)


def verify_rf(
    genotype: Genotype, input_hw: Tuple[int, int], trials: int, seed: int = 0
) -> RFReport:
    """Check empirical supports against the analytical profile.

    Per trial: gradient support must be contained in the theoretical support.
    For box-only genotypes the perturbation-probe support must equal it.
    """
    if trials < 1:
        raise InvalidGenotype("trials must be >= 1")
    H, W = input_hw
    profile = theoretical_rf(genotype, input_hw)
    center = (H // 2, W // 2)
    theo_mask = rasterize(profile.output, input_hw, center)
    forward = dag_forward_fn(genotype)
    report = RFReport(genotype=genotype, trials=trials, box_only=is_box_only(genotype))

    for trial in range(trials):
        rng = stream(seed, "verify_rf", str(trial))
        x = Tensor(rng.standard_normal((1, 1, H, W)).astype(np.float32))
        erf = compute_erf(forward, x, (0, center[0], center[1]))
        leak = erf.support() & ~theo_mask
        if leak.any():
            report.containment_violations += 1
            rr, cc = np.argwhere(leak)[0]
            report.details.append(
                f"trial {trial}: gradient support escapes theoretical RF at ({rr},{cc})"
            )

    if report.box_only:
        rng = stream(seed, "verify_rf", "probe")
        x = Tensor(rng.standard_normal((1, 1, H, W)).astype(np.float32))
        dep = dependency_support(forward, x, (0, center[0], center[1]))
        if not np.array_equal(dep, theo_mask):
            report.equality_violations += 1
            diff = np.argwhere(dep != theo_mask)
            rr, cc = diff[0]
            report.details.append(
                f"dependency support differs from theoretical RF at ({rr},{cc}) "
                f"(+{int((dep & ~theo_mask).sum())}/-{int((~dep & theo_mask).sum())} pixels)"
            )
    return report
