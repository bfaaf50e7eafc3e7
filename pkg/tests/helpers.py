"""Small builders shared by the test modules."""

import numpy as np

from theoremgraph.embed import LocalEmbedder
from theoremgraph.graph import Edge, Node, NodeKind, ReasoningGraph
from theoremgraph.matcher import TheoremEntry, TheoremLibrary


def unit(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_graph(rng, dim, n0=None, steps=None):
    """A valid graph grown by random expansions from ``n0`` conditions."""
    n0 = int(rng.integers(1, 5)) if n0 is None else n0
    steps = int(rng.integers(0, 6)) if steps is None else steps
    g = ReasoningGraph.new([(f"c{i}", unit(rng, dim)) for i in range(n0)])
    for t in range(steps):
        eligible = [n.id for n in g.nodes if n.kind != NodeKind.THEOREM]
        k = int(rng.integers(1, min(3, len(eligible)) + 1))
        prem = rng.choice(eligible, size=k, replace=False).tolist()
        g = g.expand(f"t{t}", unit(rng, dim), prem, f"z{t}", unit(rng, dim))
    return g


def relabel(g, perm):
    """Same graph with node ``i`` renamed to ``perm[i]``."""
    nodes = [None] * len(g.nodes)
    for n in g.nodes:
        j = int(perm[n.id])
        nodes[j] = Node(j, n.kind, n.text, n.embedding, n.created_at_step)
    edges = [Edge(int(perm[e.src]), int(perm[e.dst]), e.kind) for e in g.edges]
    rng = np.random.default_rng(len(edges))
    edges = [edges[i] for i in rng.permutation(len(edges))]
    return ReasoningGraph(g.dim, nodes, edges, g.step)


def text_library(statements, embedder):
    return TheoremLibrary([TheoremEntry(f"T{i}", s, embedder.embed(s)) for i, s in enumerate(statements)])


FIXTURE_DIM = 64
FIXTURE_THEOREMS = [
    "distance equals speed times time",
    "total cost equals unit price times quantity",
    "the sum of parts gives the whole amount",
]
FIXTURE_PREMISES = ["the car moves at speed 6", "it travels for time 7"]
FIXTURE_QUESTION = "how far does the car travel?"
FIXTURE_SCRIPT = [
    "speed times time: 6 times 7",
    "the product of 6 and 7 is 42",
    "so the distance is 42. ANSWER: 42",
]


def fixture_embedder():
    return LocalEmbedder(FIXTURE_DIM)
