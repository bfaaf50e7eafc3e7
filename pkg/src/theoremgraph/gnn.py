"""Relational message-passing encoder for reasoning graphs.

Per layer ``k`` every node ``i`` is updated as::

    x_i <- tanh(W_self[k]^T x_i + sum_r mean_{j in N_r(i)} W_rel[k][r]^T x_j + b[k])

where ``N_r(i)`` are the in-neighbours of ``i`` under relation ``r``. The
graph state is the mean of the final node features, projected by ``W_out``
and L2-normalized. Gradients are derived by hand (no autograd dependency);
several graphs can be encoded at once as a disjoint union, which is how the
trainer batches.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .embed import normalize
from .errors import CheckpointError, DimensionMismatch, EmptyGraph, TapeMismatch, ZeroNorm
from .graph import RELATIONS, ReasoningGraph

REL_NAMES = tuple(r.value for r in RELATIONS)
ZERO_NORM_TOL = 1e-12


@dataclass(frozen=True)
class GnnConfig:
    layers: int = 2
    hidden_dim: int = 128
    input_dim: int = 1536
    out_dim: int = 1536
    seed: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.hidden_dim < 1 or self.input_dim < 1 or self.out_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.activation != "tanh":
            raise ValueError("only tanh activation is supported")

    def param_count(self) -> int:
        h = self.hidden_dim
        return self.input_dim * h + self.layers * (3 * h * h + h) + h * self.out_dim


@dataclass
class GnnParams:
    w_in: np.ndarray
    w_self: list = field(default_factory=list)
    w_rel: list = field(default_factory=list)  # one {relation name: matrix} per layer
    bias: list = field(default_factory=list)
    w_out: np.ndarray = None

    @property
    def layers(self) -> int:
        return len(self.w_self)

    def named(self) -> Iterator[tuple[str, np.ndarray]]:
        """Yield ``(name, array)`` in a fixed order; arrays are live views."""
        yield "w_in", self.w_in
        for k in range(self.layers):
            yield f"w_self.{k}", self.w_self[k]
            for r in REL_NAMES:
                yield f"w_rel.{k}.{r}", self.w_rel[k][r]
            yield f"bias.{k}", self.bias[k]
        yield "w_out", self.w_out

    def count(self) -> int:
        return sum(a.size for _, a in self.named())

    def map(self, fn) -> "GnnParams":
        return GnnParams(
            w_in=fn(self.w_in),
            w_self=[fn(w) for w in self.w_self],
            w_rel=[{r: fn(w[r]) for r in REL_NAMES} for w in self.w_rel],
            bias=[fn(b) for b in self.bias],
            w_out=fn(self.w_out),
        )

    def copy(self) -> "GnnParams":
        return self.map(np.array)

    def zeros_like(self) -> "GnnParams":
        return self.map(np.zeros_like)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named()])

    def with_flat(self, vec: np.ndarray) -> "GnnParams":
        out = self.copy()
        pos = 0
        for _, a in out.named():
            a[...] = vec[pos : pos + a.size].reshape(a.shape)
            pos += a.size
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.named())

    def equals(self, other: "GnnParams") -> bool:
        return all(
            na == nb and a.shape == b.shape and a.tobytes() == b.tobytes()
            for (na, a), (nb, b) in zip(self.named(), other.named())
        ) and self.layers == other.layers


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: GnnConfig) -> GnnParams:
    rng = np.random.default_rng(cfg.seed)
    h = cfg.hidden_dim
    w_in = _glorot(rng, cfg.input_dim, h)
    w_self, w_rel, bias = [], [], []
    for _ in range(cfg.layers):
        w_self.append(_glorot(rng, h, h))
        w_rel.append({r: _glorot(rng, h, h) for r in REL_NAMES})
        bias.append(np.zeros(h))
    w_out = _glorot(rng, h, cfg.out_dim)
    return GnnParams(w_in, w_self, w_rel, bias, w_out)


# -- batching ---------------------------------------------------------------


@dataclass
class GraphBatch:
    """Disjoint union of graphs: stacked features, mean-aggregation and pooling matrices."""

    features: np.ndarray  # N x d_in
    adjacency: dict  # relation name -> N x N, row i holds 1/|N_r(i)| at in-neighbours
    pooling: np.ndarray  # G x N, row g averages the nodes of graph g
    sizes: tuple

    @classmethod
    def from_graphs(cls, graphs: Sequence[ReasoningGraph]) -> "GraphBatch":
        if not graphs:
            raise EmptyGraph("no graphs to encode")
        sizes = tuple(len(g.nodes) for g in graphs)
        if min(sizes) == 0:
            raise EmptyGraph("cannot encode a graph without nodes")
        dim = graphs[0].dim
        n = sum(sizes)
        feats = np.empty((n, dim))
        adj = {r: np.zeros((n, n)) for r in REL_NAMES}
        pool = np.zeros((len(graphs), n))
        off = 0
        for gi, g in enumerate(graphs):
            if g.dim != dim:
                raise DimensionMismatch("all graphs in a batch must share one dimension")
            for node in g.nodes:
                feats[off + node.id] = node.embedding
            for e in g.edges:
                adj[e.kind.value][off + e.dst, off + e.src] = 1.0
            pool[gi, off : off + len(g.nodes)] = 1.0 / len(g.nodes)
            off += len(g.nodes)
        for a in adj.values():
            deg = a.sum(axis=1, keepdims=True)
            np.divide(a, deg, out=a, where=deg > 0)
        return cls(feats, adj, pool, sizes)


@dataclass
class GradientTape:
    batch: GraphBatch
    params: GnnParams
    cfg: GnnConfig
    xs: list  # node features per layer, xs[0] = input projection
    msgs: list  # per layer: relation -> aggregated neighbour features
    pooled: np.ndarray
    projected: np.ndarray
    norms: np.ndarray
    output: np.ndarray

    def replay(self) -> np.ndarray:
        return _forward(self.batch, self.params, self.cfg).output


def _forward(batch: GraphBatch, params: GnnParams, cfg: GnnConfig) -> GradientTape:
    if batch.features.shape[1] != params.w_in.shape[0]:
        raise DimensionMismatch(f"node features have dim {batch.features.shape[1]}, encoder expects {params.w_in.shape[0]}")
    x = batch.features @ params.w_in
    xs, msgs = [x], []
    for k in range(params.layers):
        m = {r: batch.adjacency[r] @ x for r in REL_NAMES}
        pre = x @ params.w_self[k] + params.bias[k]
        for r in REL_NAMES:
            pre = pre + m[r] @ params.w_rel[k][r]
        x = np.tanh(pre)
        xs.append(x)
        msgs.append(m)
    pooled = batch.pooling @ x
    projected = pooled @ params.w_out
    norms = np.linalg.norm(projected, axis=1)
    if np.any(norms < ZERO_NORM_TOL) or not np.all(np.isfinite(norms)):
        raise ZeroNorm(f"readout norm {norms.min():.3g} too small to normalize")
    output = projected / norms[:, None]
    return GradientTape(batch, params, cfg, xs, msgs, pooled, projected, norms, output)


def encode_batch(graphs: Sequence[ReasoningGraph], params: GnnParams, cfg: GnnConfig):
    """Encode several graphs at once; returns (G x d_out states, tape)."""
    tape = _forward(GraphBatch.from_graphs(graphs), params, cfg)
    return tape.output, tape


def encode(g: ReasoningGraph, params: GnnParams, cfg: GnnConfig):
    if not g.nodes:
        raise EmptyGraph("cannot encode a graph without nodes")
    states, tape = encode_batch([g], params, cfg)
    return states[0], tape


def backward(tape: GradientTape, d_output: np.ndarray, params: Optional[GnnParams] = None) -> GnnParams:
    """Gradient of ``sum(d_output * output)`` with respect to every parameter."""
    if params is not None and params is not tape.params:
        raise TapeMismatch("tape was recorded with different parameters")
    d_out = np.asarray(d_output, dtype=np.float64)
    if d_out.ndim == 1:
        d_out = d_out[None, :]
    if d_out.shape != tape.output.shape:
        raise TapeMismatch(f"d_output shape {d_out.shape} does not match output {tape.output.shape}")
    p = tape.params
    r = tape.output

    # through the L2 normalization
    d_proj = (d_out - r * np.sum(r * d_out, axis=1, keepdims=True)) / tape.norms[:, None]
    grads = p.zeros_like()
    grads.w_out = tape.pooled.T @ d_proj
    dx = tape.batch.pooling.T @ (d_proj @ p.w_out.T)

    for k in reversed(range(p.layers)):
        x_in, x_out, m = tape.xs[k], tape.xs[k + 1], tape.msgs[k]
        d_pre = dx * (1.0 - x_out * x_out)
        grads.w_self[k] = x_in.T @ d_pre
        grads.bias[k] = d_pre.sum(axis=0)
        dx = d_pre @ p.w_self[k].T
        for rel in REL_NAMES:
            grads.w_rel[k][rel] = m[rel].T @ d_pre
            dx = dx + tape.batch.adjacency[rel].T @ (d_pre @ p.w_rel[k][rel].T)

    grads.w_in = tape.batch.features.T @ dx
    return grads


def average_encode(g: ReasoningGraph) -> np.ndarray:
    """Parameter-free state: normalized mean of the node input embeddings."""
    if not g.nodes:
        raise EmptyGraph("cannot encode a graph without nodes")
    mean = np.mean([n.embedding for n in g.nodes], axis=0)
    if np.linalg.norm(mean) < ZERO_NORM_TOL:
        raise ZeroNorm("node embeddings cancel out")
    return normalize(mean)


# -- checkpoints --------------------------------------------------------------


def save_params(path, params: GnnParams, cfg: GnnConfig, extra: Optional[dict] = None) -> None:
    doc = {
        "config": asdict(cfg),
        "params": {name: {"shape": list(a.shape), "data": a.ravel().tolist()} for name, a in params.named()},
    }
    if extra:
        doc["meta"] = extra
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def load_params(path) -> tuple[GnnParams, GnnConfig]:
    try:
        doc = json.loads(Path(path).read_text())
        cfg = GnnConfig(**doc["config"])
        stored = doc["params"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    params = init_params(GnnConfig(**{**asdict(cfg), "seed": 0})).zeros_like()
    for name, a in params.named():
        if name not in stored:
            raise CheckpointError(f"checkpoint is missing {name}")
        rec = stored[name]
        if tuple(rec["shape"]) != a.shape or len(rec["data"]) != a.size:
            raise CheckpointError(f"{name}: shape {rec['shape']} does not match config {a.shape}")
        a[...] = np.asarray(rec["data"], dtype=np.float64).reshape(a.shape)
    if len(stored) != sum(1 for _ in params.named()):
        raise CheckpointError("checkpoint has unexpected parameter blocks")
    if params.count() != cfg.param_count():
        raise CheckpointError("parameter count disagrees with config")
    return params, cfg
