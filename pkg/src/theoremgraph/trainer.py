"""Contrastive (InfoNCE) training of the graph encoder for theorem retrieval."""

from __future__ import annotations

import json
import logging
import math
import time
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DanglingPremiseRef, EmptyDataset, NonPositiveTemperature, NumericFailure, UnknownTheoremId
from .gnn import GnnConfig, GnnParams, backward, encode_batch, init_params, save_params
from .graph import ReasoningGraph
from .matcher import TheoremLibrary

log = logging.getLogger(__name__)


def infonce_loss(s_pos: float, s_negs: Sequence[float], tau: float):
    """Return ``(loss, d_loss/d_s_pos, [d_loss/d_s_neg, ...])``.

    ``loss = -log(exp(s_pos/tau) / (exp(s_pos/tau) + sum_j exp(s_j/tau)))``,
    evaluated with max-subtraction.
    """
    if not tau > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")
    if len(s_negs) == 0:
        return 0.0, 0.0, []
    logits = np.asarray([s_pos, *s_negs], dtype=np.float64) / tau
    top = logits.max()
    shifted = np.exp(logits - top)
    total = shifted.sum()
    loss = float(top + math.log(total) - logits[0])
    probs = shifted / total
    d_pos = float((probs[0] - 1.0) / tau)
    d_negs = (probs[1:] / tau).tolist()
    return loss, d_pos, d_negs


@dataclass
class StepSample:
    graph_prefix: ReasoningGraph
    gold_theorem_id: str


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-2
    temperature: float = 0.1
    negatives: Optional[int] = None
    seed: int = 0
    balance_labels: bool = True
    samples_per_label_min: int = 200
    samples_per_label_max: int = 600

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not self.temperature > 0:
            raise NonPositiveTemperature("temperature must be positive")
        if self.negatives is not None and self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.samples_per_label_min > self.samples_per_label_max:
            raise ValueError("samples_per_label_min must not exceed samples_per_label_max")

    @property
    def n_negatives(self) -> int:
        if self.negatives is not None:
            return self.negatives
        return max(1, min(self.batch_size - 1, 16))


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    retrieval_top1: float
    wall_ms: float = 0.0


def build_step_samples(dataset, lib: TheoremLibrary, embedder) -> list[StepSample]:
    """Unroll each annotated chain into (prefix graph, gold theorem) pairs.

    The initial graph holds the premises followed by the question, matching
    what the inference loop builds.
    """
    out = []
    for si, sample in enumerate(dataset):
        texts = list(sample.premises) + [sample.question]
        g = ReasoningGraph.new([(t, embedder.embed(t)) for t in texts])
        n_prem = len(sample.premises)
        conclusion_nodes = []
        for k, st in enumerate(sample.steps):
            if st.theorem_id not in lib:
                raise UnknownTheoremId(f"sample {si} step {k}: theorem {st.theorem_id!r} not in library")
            nodes = []
            for ref in st.used_ids:
                if 0 <= ref < n_prem:
                    nodes.append(ref)
                elif n_prem <= ref < n_prem + k:
                    nodes.append(conclusion_nodes[ref - n_prem])
                else:
                    raise DanglingPremiseRef(f"sample {si} step {k}: used id {ref} does not resolve")
            out.append(StepSample(g, st.theorem_id))
            entry = lib[st.theorem_id]
            g = g.expand(entry.statement, entry.embedding, nodes, st.result, embedder.embed(st.result))
            conclusion_nodes.append(len(g.nodes) - 1)
    return out


def balance(samples: Sequence[StepSample], cfg: TrainConfig) -> list[StepSample]:
    rng = np.random.default_rng(cfg.seed)
    if not cfg.balance_labels:
        return [samples[i] for i in rng.permutation(len(samples))]
    groups = defaultdict(list)
    for s in samples:
        groups[s.gold_theorem_id].append(s)
    out = []
    for label in sorted(groups):
        group = groups[label]
        n = len(group)
        if n > cfg.samples_per_label_max:
            keep = rng.choice(n, size=cfg.samples_per_label_max, replace=False)
            group = [group[i] for i in sorted(keep)]
        elif n < cfg.samples_per_label_min:
            full, rest = divmod(cfg.samples_per_label_min, n)
            extra = rng.choice(n, size=rest, replace=False)
            group = group * full + [group[i] for i in sorted(extra)]
        out.extend(group)
    return [out[i] for i in rng.permutation(len(out))]


class Adam:
    def __init__(self, params: GnnParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: GnnParams, grads: GnnParams, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for (_, p), (_, g), (_, m), (_, v) in zip(params.named(), grads.named(), self.m.named(), self.v.named()):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _negatives(pos: int, batch_golds: Sequence[int], n_lib: int, n_neg: int, rng) -> list[int]:
    n_neg = min(n_neg, n_lib - 1)
    negs = list(dict.fromkeys(g for g in batch_golds if g != pos))
    if len(negs) > n_neg:
        negs = [negs[i] for i in sorted(rng.choice(len(negs), size=n_neg, replace=False))]
    if len(negs) < n_neg:
        taken = set(negs) | {pos}
        pool = [j for j in range(n_lib) if j not in taken]
        negs += [pool[i] for i in rng.choice(len(pool), size=n_neg - len(negs), replace=False)]
    return negs


def batch_loss(states: np.ndarray, golds: Sequence[int], lib: TheoremLibrary, cfg: TrainConfig, rng):
    """Mean InfoNCE over a batch and its gradient with respect to the states."""
    d_states = np.zeros_like(states)
    total = 0.0
    bsz = len(golds)
    for i, pos in enumerate(golds):
        negs = _negatives(pos, golds, len(lib), cfg.n_negatives, rng)
        vecs = lib.matrix[[pos] + negs]
        scores = vecs @ states[i]
        loss, d_pos, d_negs = infonce_loss(scores[0], scores[1:], cfg.temperature)
        total += loss
        d_states[i] = (np.asarray([d_pos] + d_negs) @ vecs) / bsz
    return total / bsz, d_states


def retrieval_top1(samples: Sequence[StepSample], params: GnnParams, gnn_cfg: GnnConfig, lib: TheoremLibrary, chunk: int = 256) -> float:
    hits = 0
    for start in range(0, len(samples), chunk):
        part = samples[start : start + chunk]
        states, _ = encode_batch([s.graph_prefix for s in part], params, gnn_cfg)
        best = np.argmax(states @ lib.matrix.T, axis=1)
        hits += sum(int(b == lib.index(s.gold_theorem_id)) for b, s in zip(best, part))
    return hits / len(samples)


def train(
    samples: Sequence[StepSample],
    lib: TheoremLibrary,
    cfg: TrainConfig,
    gnn_cfg: GnnConfig,
    params: Optional[GnnParams] = None,
    log_path=None,
    checkpoint_path=None,
    best_checkpoint_path=None,
    config_echo: Optional[dict] = None,
) -> tuple[GnnParams, list[EpochRecord]]:
    """Minimize per-step InfoNCE with Adam; return trained params and history.

    Negatives for each sample are the gold theorems of the other batch
    members plus uniform library draws up to ``cfg.n_negatives``, never the
    positive. ``retrieval_top1`` is measured on the unbalanced input set
    after each epoch.
    """
    if not samples:
        raise EmptyDataset("no training samples")
    if len(lib) == 0:
        raise EmptyDataset("empty theorem library")
    for s in samples:
        if s.gold_theorem_id not in lib:
            raise UnknownTheoremId(s.gold_theorem_id)
    params = params.copy() if params is not None else init_params(gnn_cfg)
    opt = Adam(params)
    rng = np.random.default_rng(cfg.seed)
    train_set = balance(samples, cfg)
    history: list[EpochRecord] = []
    best = -1.0
    log_file = Path(log_path).open("w", encoding="utf-8") if log_path else None
    echo = {"train": asdict(cfg), "gnn": asdict(gnn_cfg), **(config_echo or {})}
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(train_set))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
                golds = [lib.index(s.gold_theorem_id) for s in batch]
                states, tape = encode_batch([s.graph_prefix for s in batch], params, gnn_cfg)
                loss, d_states = batch_loss(states, golds, lib, cfg, rng)
                if not math.isfinite(loss):
                    raise NumericFailure(f"non-finite loss at epoch {epoch}")
                grads = backward(tape, d_states)
                if not grads.all_finite():
                    raise NumericFailure(f"non-finite gradient at epoch {epoch}")
                opt.step(params, grads, cfg.learning_rate)
                losses.append(loss * len(batch))
            if not params.all_finite():
                raise NumericFailure(f"parameters diverged at epoch {epoch}")
            top1 = retrieval_top1(samples, params, gnn_cfg, lib)
            rec = EpochRecord(epoch, sum(losses) / len(train_set), top1, (time.perf_counter() - t0) * 1000.0)
            history.append(rec)
            log.info("epoch %d loss %.4f top1 %.3f", epoch, rec.mean_loss, rec.retrieval_top1)
            if log_file:
                log_file.write(json.dumps(asdict(rec)) + "\n")
                log_file.flush()
            if checkpoint_path:
                save_params(checkpoint_path, params, gnn_cfg, {**echo, "epoch": epoch, "retrieval_top1": top1})
            if best_checkpoint_path and top1 > best:
                save_params(best_checkpoint_path, params, gnn_cfg, {**echo, "epoch": epoch, "retrieval_top1": top1})
            best = max(best, top1)
    finally:
        if log_file:
            log_file.close()
    return params, history
