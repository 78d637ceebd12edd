"""Discrete architecture assignments and their text serialization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

from .errors import InvalidGenotype
from .ops import OPS_BY_NAME, OP_NAMES, ALL_OPS, OpKind

GENOTYPE_FORMAT = "rfsearch-genotype"
GENOTYPE_VERSION = 1


def edge_pairs(n_nodes: int) -> List[Tuple[int, int]]:
    """All DAG edges (from, to) with from < to, sorted by (to, from)."""
    return [(i, j) for j in range(1, n_nodes) for i in range(j)]


def edge_index(i: int, j: int) -> int:
    """Position of edge (i, j), i < j, in the (to, from) ordering."""
    return j * (j - 1) // 2 + i


@dataclass
class Genotype:
    """One OpKind per DAG edge over nodes 0..n_nodes-1."""

    n_nodes: int
    edges: List[Tuple[int, int, OpKind]]
    version: int = GENOTYPE_VERSION
    candidate_set: Tuple[OpKind, ...] = field(default_factory=lambda: ALL_OPS)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_nodes < 2:
            raise InvalidGenotype(f"need at least 2 nodes, got {self.n_nodes}")
        expected = edge_pairs(self.n_nodes)
        got = [(i, j) for i, j, _ in self.edges]
        if sorted(got) != sorted(expected):
            raise InvalidGenotype(
                f"edges must cover every i<j pair over {self.n_nodes} nodes exactly once"
            )
        self.edges = sorted(self.edges, key=lambda e: (e[1], e[0]))
        for _, _, op in self.edges:
            if not isinstance(op, OpKind):
                raise InvalidGenotype(f"edge op {op!r} is not an OpKind")

    def op_for(self, i: int, j: int) -> OpKind:
        return self.edges[edge_index(i, j)][2]

    def to_text(self) -> str:
        lines = [
            f"format = {GENOTYPE_FORMAT}",
            f"version = {self.version}",
            f"n_nodes = {self.n_nodes}",
            "candidate_set = " + ",".join(OP_NAMES[k] for k in self.candidate_set),
        ]
        for i, j, op in self.edges:
            lines.append(f"edge = {i},{j},{OP_NAMES[op]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Genotype":
        fields: dict[str, str] = {}
        edges: List[Tuple[int, int, OpKind]] = []
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidGenotype(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "edge":
                parts = [p.strip() for p in value.split(",")]
                if len(parts) != 3:
                    raise InvalidGenotype(f"line {lineno}: edge needs 'from,to,op'")
                try:
                    i, j = int(parts[0]), int(parts[1])
                except ValueError as e:
                    raise InvalidGenotype(f"line {lineno}: bad edge indices") from e
                if parts[2] not in OPS_BY_NAME:
                    raise InvalidGenotype(f"line {lineno}: unknown op name '{parts[2]}'")
                if (i, j) in seen:
                    raise InvalidGenotype(f"line {lineno}: duplicate edge ({i},{j})")
                seen.add((i, j))
                edges.append((i, j, OPS_BY_NAME[parts[2]]))
            elif key in ("format", "version", "n_nodes", "candidate_set"):
                if key in fields:
                    raise InvalidGenotype(f"line {lineno}: duplicate field '{key}'")
                fields[key] = value
            else:
                raise InvalidGenotype(f"line {lineno}: unknown field '{key}'")
        if fields.get("format") != GENOTYPE_FORMAT:
            raise InvalidGenotype(f"bad or missing format field: {fields.get('format')!r}")
        try:
            version = int(fields["version"])
            n_nodes = int(fields["n_nodes"])
        except (KeyError, ValueError) as e:
            raise InvalidGenotype("missing or invalid version/n_nodes") from e
        cand_names = [s.strip() for s in fields.get("candidate_set", "").split(",") if s.strip()]
        for name in cand_names:
            if name not in OPS_BY_NAME:
                raise InvalidGenotype(f"unknown op name '{name}' in candidate_set")
        candidate_set = tuple(OPS_BY_NAME[n] for n in cand_names) if cand_names else ALL_OPS
        return cls(n_nodes=n_nodes, edges=edges, version=version, candidate_set=candidate_set)


def chain_genotype(n_nodes: int, op: OpKind, filler: OpKind = OpKind.Zero) -> Genotype:
    """Sequential chain 0 -> 1 -> ... -> n-1 of `op`; all other edges `filler`."""
    edges = []
    for i, j in edge_pairs(n_nodes):
        edges.append((i, j, op if j == i + 1 else filler))
    return Genotype(n_nodes=n_nodes, edges=edges)


def uniform_genotype(n_nodes: int, op: OpKind) -> Genotype:
    """Every edge assigned the same operation."""
    return Genotype(n_nodes=n_nodes, edges=[(i, j, op) for i, j in edge_pairs(n_nodes)])
