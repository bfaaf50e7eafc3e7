"""The evolving reasoning-state graph.

Nodes are conditions, applied theorems and derived conclusions; edges are
``UseCond`` (premise -> theorem) and ``Infers`` (theorem -> conclusion).
Graphs only ever grow: :meth:`ReasoningGraph.expand` returns a new graph
sharing the (immutable) nodes of the old one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Sequence

import numpy as np

from .embed import UNIT_TOL, check_unit
from .errors import (
    DimensionMismatch,
    EmptyConditions,
    EmptyPremises,
    EmptyText,
    InvalidGraph,
    PremiseIsTheorem,
    UnknownPremise,
)


class NodeKind(str, Enum):
    CONDITION = "Condition"
    THEOREM = "Theorem"
    CONCLUSION = "Conclusion"


class EdgeKind(str, Enum):
    USE_COND = "UseCond"
    INFERS = "Infers"


RELATIONS = (EdgeKind.USE_COND, EdgeKind.INFERS)
PREMISE_KINDS = (NodeKind.CONDITION, NodeKind.CONCLUSION)

DOT_SHAPES = {
    NodeKind.CONDITION: "box",
    NodeKind.THEOREM: "hexagon",
    NodeKind.CONCLUSION: "ellipse",
}


@dataclass(frozen=True, eq=False)
class Node:
    id: int
    kind: NodeKind
    text: str
    embedding: np.ndarray
    created_at_step: int = 0

    def same_as(self, other: "Node") -> bool:
        return (
            self.id == other.id
            and self.kind == other.kind
            and self.text == other.text
            and self.created_at_step == other.created_at_step
            and np.array_equal(self.embedding, other.embedding)
        )


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: EdgeKind


def _frozen(v) -> np.ndarray:
    v = np.array(v, dtype=np.float64)
    v.flags.writeable = False
    return v


class ReasoningGraph:
    def __init__(self, dim: int, nodes: Sequence[Node] = (), edges: Sequence[Edge] = (), step: int = 0):
        # raw constructor: no validation, so tests can build broken graphs
        self.dim = dim
        self.nodes: list[Node] = list(nodes)
        self.edges: list[Edge] = list(edges)
        self.step = step

    @classmethod
    def new(cls, conditions: Iterable[tuple[str, np.ndarray]]) -> "ReasoningGraph":
        conditions = list(conditions)
        if not conditions:
            raise EmptyConditions("at least one condition is required")
        dim = np.asarray(conditions[0][1]).shape[0]
        nodes = []
        for i, (text, emb) in enumerate(conditions):
            if not text:
                raise EmptyText(f"condition {i} has empty text")
            if np.asarray(emb).shape != (dim,):
                raise DimensionMismatch(f"condition {i} has shape {np.asarray(emb).shape}, expected ({dim},)")
            nodes.append(Node(i, NodeKind.CONDITION, text, _frozen(check_unit(emb, dim)), 0))
        return cls(dim, nodes, (), 0)

    def __len__(self):
        return len(self.nodes)

    def copy(self) -> "ReasoningGraph":
        return ReasoningGraph(self.dim, self.nodes, self.edges, self.step)

    def ids_of(self, kind: NodeKind) -> list[int]:
        return [n.id for n in self.nodes if n.kind == kind]

    def in_neighbors(self, node_id: int, kind: EdgeKind) -> list[int]:
        return [e.src for e in self.edges if e.dst == node_id and e.kind == kind]

    def expand(
        self,
        theorem_text: str,
        theorem_emb: np.ndarray,
        premise_ids: Sequence[int],
        conclusion_text: str,
        conclusion_emb: np.ndarray,
    ) -> "ReasoningGraph":
        """Add one applied theorem and its conclusion; return the new graph."""
        if not premise_ids:
            raise EmptyPremises("a theorem application needs at least one premise")
        premises = list(dict.fromkeys(int(p) for p in premise_ids))
        for p in premises:
            if not 0 <= p < len(self.nodes):
                raise UnknownPremise(p)
            if self.nodes[p].kind == NodeKind.THEOREM:
                raise PremiseIsTheorem(f"node {p} is a Theorem and cannot be a premise")
        if not theorem_text or not conclusion_text:
            raise EmptyText("theorem and conclusion text must be nonempty")
        t_emb = _frozen(check_unit(theorem_emb, self.dim))
        z_emb = _frozen(check_unit(conclusion_emb, self.dim))

        t_id, z_id = len(self.nodes), len(self.nodes) + 1
        nodes = self.nodes + [
            Node(t_id, NodeKind.THEOREM, theorem_text, t_emb, self.step),
            Node(z_id, NodeKind.CONCLUSION, conclusion_text, z_emb, self.step),
        ]
        edges = self.edges + [Edge(p, t_id, EdgeKind.USE_COND) for p in premises]
        edges.append(Edge(t_id, z_id, EdgeKind.INFERS))
        return ReasoningGraph(self.dim, nodes, edges, self.step + 1)

    def same_as(self, other: "ReasoningGraph") -> bool:
        return (
            self.dim == other.dim
            and self.step == other.step
            and len(self.nodes) == len(other.nodes)
            and all(a.same_as(b) for a, b in zip(self.nodes, other.nodes))
            and sorted(self.edges, key=_edge_key) == sorted(other.edges, key=_edge_key)
        )

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "step": self.step,
            "nodes": [
                {
                    "id": n.id,
                    "kind": n.kind.value,
                    "text": n.text,
                    "embedding": n.embedding.tolist(),
                    "created_at_step": n.created_at_step,
                }
                for n in self.nodes
            ],
            "edges": [{"src": e.src, "dst": e.dst, "kind": e.kind.value} for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReasoningGraph":
        nodes = [
            Node(
                int(n["id"]),
                NodeKind(n["kind"]),
                n["text"],
                _frozen(n["embedding"]),
                int(n["created_at_step"]),
            )
            for n in data["nodes"]
        ]
        edges = [Edge(int(e["src"]), int(e["dst"]), EdgeKind(e["kind"])) for e in data["edges"]]
        return cls(int(data["dim"]), nodes, edges, int(data["step"]))


def _edge_key(e: Edge):
    return (e.src, e.dst, e.kind.value)


def new_graph(conditions) -> ReasoningGraph:
    return ReasoningGraph.new(conditions)


def expand(g: ReasoningGraph, theorem_text, theorem_emb, premise_ids, conclusion_text, conclusion_emb):
    return g.expand(theorem_text, theorem_emb, premise_ids, conclusion_text, conclusion_emb)


def validate(g: ReasoningGraph) -> list[str]:
    """List every broken structural rule; an empty list means the graph is sound."""
    out = []
    n = len(g.nodes)
    for i, node in enumerate(g.nodes):
        if node.id != i:
            out.append(f"node at position {i}: id {node.id} breaks dense ordering")
        if not node.text:
            out.append(f"node {node.id}: empty text")
        emb = np.asarray(node.embedding)
        if emb.shape != (g.dim,):
            out.append(f"node {node.id}: embedding shape {emb.shape} != ({g.dim},)")
        elif abs(float(np.linalg.norm(emb)) - 1.0) > UNIT_TOL:
            out.append(f"node {node.id}: embedding is not unit norm")
        if node.kind != NodeKind.CONDITION and node.created_at_step >= g.step:
            out.append(f"node {node.id}: created_at_step {node.created_at_step} not before step {g.step}")

    seen = set()
    in_use: dict[int, int] = {}
    in_inf: dict[int, int] = {}
    out_inf: dict[int, int] = {}
    in_any: dict[int, int] = {}
    for e in g.edges:
        label = f"edge {e.src}->{e.dst} ({e.kind.value})"
        key = _edge_key(e)
        if key in seen:
            out.append(f"{label}: duplicate")
            continue
        seen.add(key)
        if not (0 <= e.src < n and 0 <= e.dst < n):
            out.append(f"{label}: endpoint does not exist")
            continue
        if e.src == e.dst:
            out.append(f"{label}: self-loop")
            continue
        src, dst = g.nodes[e.src], g.nodes[e.dst]
        # degree rules below only count well-typed edges
        if e.kind == EdgeKind.USE_COND:
            if src.kind not in PREMISE_KINDS or dst.kind != NodeKind.THEOREM:
                out.append(f"{label}: UseCond must run Condition|Conclusion -> Theorem")
            else:
                in_use[e.dst] = in_use.get(e.dst, 0) + 1
        else:
            if src.kind != NodeKind.THEOREM or dst.kind != NodeKind.CONCLUSION:
                out.append(f"{label}: Infers must run Theorem -> Conclusion")
            else:
                in_inf[e.dst] = in_inf.get(e.dst, 0) + 1
                out_inf[e.src] = out_inf.get(e.src, 0) + 1
        if dst.kind == NodeKind.CONDITION:
            in_any[e.dst] = in_any.get(e.dst, 0) + 1
        if src.created_at_step > dst.created_at_step:
            out.append(f"{label}: points backwards in time")

    for node in g.nodes:
        if node.kind == NodeKind.THEOREM:
            if in_use.get(node.id, 0) < 1:
                out.append(f"node {node.id}: Theorem without UseCond in-edges")
            if out_inf.get(node.id, 0) != 1:
                out.append(f"node {node.id}: Theorem needs exactly one Infers out-edge, has {out_inf.get(node.id, 0)}")
        elif node.kind == NodeKind.CONCLUSION:
            if in_inf.get(node.id, 0) != 1:
                out.append(f"node {node.id}: Conclusion needs exactly one Infers in-edge, has {in_inf.get(node.id, 0)}")
        elif in_any.get(node.id, 0):
            out.append(f"node {node.id}: Condition has incoming edges")

    n_theorems = sum(1 for x in g.nodes if x.kind == NodeKind.THEOREM)
    n_conclusions = sum(1 for x in g.nodes if x.kind == NodeKind.CONCLUSION)
    if n_theorems != g.step or n_conclusions != g.step:
        out.append(f"graph: step {g.step} but {n_theorems} theorems and {n_conclusions} conclusions")

    sorter = TopologicalSorter({i: set() for i in range(n)})
    for e in g.edges:
        if 0 <= e.src < n and 0 <= e.dst < n:
            sorter.add(e.dst, e.src)
    try:
        sorter.prepare()
    except CycleError as exc:
        out.append(f"graph: cycle through nodes {exc.args[1]}")
    return out


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def export(g: ReasoningGraph, fmt: str = "json") -> str:
    violations = validate(g)
    if violations:
        raise InvalidGraph(violations)
    if fmt == "json":
        return json.dumps(g.to_dict())
    if fmt == "dot":
        lines = ["digraph reasoning {"]
        for node in g.nodes:
            lines.append(
                f'  n{node.id} [label="{_dot_escape(node.text)}", shape={DOT_SHAPES[node.kind]}, kind="{node.kind.value}"];'
            )
        for e in g.edges:
            lines.append(f'  n{e.src} -> n{e.dst} [label="{e.kind.value}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown export format {fmt!r}")


def import_json(text: str) -> ReasoningGraph:
    return ReasoningGraph.from_dict(json.loads(text))
