"""Dataset records, JSONL loading/validation, splitting, theorem clustering
and the synthetic chain generator used for training acceptance runs."""

from __future__ import annotations

import json
import math
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embed import LocalEmbedder, cosine
from .errors import ParseError, SchemaViolation, TooFewSamples
from .graph import ReasoningGraph
from .matcher import TheoremEntry, TheoremLibrary, select_premises

DEFAULT_MERGE_THRESHOLD = 0.85


@dataclass
class Step:
    description: str
    theorem_id: str
    used_ids: list  # 0..P-1 index premises, P+k is the result of step k
    result: str


@dataclass
class TrainingSample:
    question: str
    premises: list
    target_conclusion: str
    steps: list = field(default_factory=list)

    def to_record(self) -> dict:
        return asdict(self)


@dataclass
class EvalSample:
    question: str
    answer: str
    premises: list

    def to_record(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


# -- validation ---------------------------------------------------------------

TRAIN_FIELDS = ("question", "premises", "target_conclusion", "steps")
STEP_FIELDS = ("description", "theorem_id", "used_ids", "result")
EVAL_FIELDS = ("question", "answer", "premises")


def _text(obj, key, line, label=None):
    value = obj.get(key)
    if not isinstance(value, str) or not value.strip():
        raise SchemaViolation(line, label or key, "must be a nonempty string")
    return value


def _check_keys(obj, allowed, line, prefix=""):
    if not isinstance(obj, dict):
        raise SchemaViolation(line, prefix.rstrip(".") or "<record>", "must be a JSON object")
    for key in allowed:
        if key not in obj:
            raise SchemaViolation(line, prefix + key, "is missing")
    for key in obj:
        if key not in allowed:
            raise SchemaViolation(line, prefix + key, "is not a known field")


def _premises(obj, line):
    premises = obj["premises"]
    if not isinstance(premises, list) or not premises:
        raise SchemaViolation(line, "premises", "must be a nonempty list of strings")
    for i, p in enumerate(premises):
        if not isinstance(p, str) or not p.strip():
            raise SchemaViolation(line, f"premises[{i}]", "must be a nonempty string")
    return list(premises)


def parse_training_record(obj, line: int, library: Optional[TheoremLibrary] = None) -> TrainingSample:
    _check_keys(obj, TRAIN_FIELDS, line)
    question = _text(obj, "question", line)
    premises = _premises(obj, line)
    target = _text(obj, "target_conclusion", line)
    raw_steps = obj["steps"]
    if not isinstance(raw_steps, list) or not raw_steps:
        raise SchemaViolation(line, "steps", "must be a nonempty list")
    steps = []
    for k, st in enumerate(raw_steps):
        prefix = f"steps[{k}]."
        _check_keys(st, STEP_FIELDS, line, prefix)
        desc = _text(st, "description", line, prefix + "description")
        tid = _text(st, "theorem_id", line, prefix + "theorem_id")
        if library is not None and tid not in library:
            raise SchemaViolation(line, prefix + "theorem_id", f"unknown theorem {tid!r}")
        used = st["used_ids"]
        if not isinstance(used, list) or not used:
            raise SchemaViolation(line, prefix + "used_ids", "must be a nonempty list of integers")
        limit = len(premises) + k
        for u in used:
            if isinstance(u, bool) or not isinstance(u, int):
                raise SchemaViolation(line, prefix + "used_ids", f"{u!r} is not an integer")
            if not 0 <= u < limit:
                raise SchemaViolation(line, prefix + "used_ids", f"id {u} does not resolve (valid: 0..{limit - 1})")
        result = _text(st, "result", line, prefix + "result")
        steps.append(Step(desc, tid, list(used), result))
    return TrainingSample(question, premises, target, steps)


def parse_eval_record(obj, line: int) -> EvalSample:
    _check_keys(obj, EVAL_FIELDS, line)
    return EvalSample(_text(obj, "question", line), _text(obj, "answer", line), _premises(obj, line))


def _read_jsonl(path):
    with Path(path).open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, str(exc)) from exc


def load_training(path, library: Optional[TheoremLibrary] = None) -> list[TrainingSample]:
    return [parse_training_record(obj, n, library) for n, obj in _read_jsonl(path)]


def load_eval(path) -> list[EvalSample]:
    return [parse_eval_record(obj, n) for n, obj in _read_jsonl(path)]


def dumps_jsonl(samples) -> str:
    return "".join(json.dumps(s.to_record(), ensure_ascii=False) + "\n" for s in samples)


def save_jsonl(samples, path) -> None:
    Path(path).write_text(dumps_jsonl(samples), encoding="utf-8")


def to_eval_sample(sample: TrainingSample) -> EvalSample:
    return EvalSample(sample.question, sample.target_conclusion, list(sample.premises))


# -- splitting ---------------------------------------------------------------


def split(samples: Sequence, spec: SplitSpec = SplitSpec()) -> tuple[list, list]:
    """Seeded shuffle, then the first ``floor(n * fraction)`` items train."""
    n = len(samples)
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples to split, got {n}")
    n_train = math.floor(n * spec.train_fraction + 1e-9)
    n_train = min(max(n_train, 1), n - 1)
    order = np.random.default_rng(spec.seed).permutation(n)
    return [samples[i] for i in order[:n_train]], [samples[i] for i in order[n_train:]]


# -- theorem library construction --------------------------------------------


def cluster_theorems(candidates: Sequence[str], embedder, merge_threshold: float = DEFAULT_MERGE_THRESHOLD) -> TheoremLibrary:
    """Greedy first-fit clustering of candidate statements.

    A candidate joins the first cluster whose representative (its first
    member) has cosine >= ``merge_threshold``; otherwise it founds a new one.
    """
    if not candidates:
        raise ValueError("no theorem candidates")
    if not 0.0 < merge_threshold < 1.0:
        raise ValueError("merge_threshold must be in (0, 1)")
    reps: list[tuple[str, np.ndarray]] = []
    for text in candidates:
        emb = embedder.embed(text)
        if not any(cosine(emb, rep) >= merge_threshold for _, rep in reps):
            reps.append((text, emb))
    return TheoremLibrary([TheoremEntry(f"T{i:03d}", text, emb) for i, (text, emb) in enumerate(reps)])


# -- synthetic chains ----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    dim: int = 1536
    vocab_size: int = 8
    hint_words: int = 4
    noise_words: int = 1
    max_steps: int = 3
    switch_prob: float = 0.1
    distractor_prob: float = 0.5
    premise_k: int = 2
    premise_min_sim: float = 0.25


def _words(rng: np.random.Generator, count: int, taken: set) -> list[str]:
    letters = np.array(list(string.ascii_lowercase))
    out = []
    while len(out) < count:
        w = "".join(rng.choice(letters, size=int(rng.integers(5, 9))))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def generate_synthetic(
    n_theorems: int,
    chains_per_theorem: int,
    seed: int,
    cfg: SyntheticConfig = SyntheticConfig(),
    embedder=None,
) -> tuple[list[TrainingSample], TheoremLibrary]:
    """Build annotated chains over a random vocabulary-based theorem library.

    Each theorem owns a private vocabulary; its statement is that vocabulary
    and every text meant to point at it reuses a few of its words, so under
    the local 3-gram embedder hints land close to the theorem vector. A chain
    starts at its owning theorem; each later step re-applies the previous
    theorem or, with ``switch_prob``, moves to a different one, announced only
    by the newest conclusion. Premise annotations are exactly what
    ``select_premises`` picks along the gold path.
    """
    if n_theorems < 2:
        raise ValueError("need at least two theorems")
    rng = np.random.default_rng(seed)
    embedder = embedder or LocalEmbedder(cfg.dim)
    taken: set = set()
    vocab = [_words(rng, cfg.vocab_size, taken) for _ in range(n_theorems)]
    noise_pool = _words(rng, 400, taken)
    ids = [f"T{j:03d}" for j in range(n_theorems)]
    lib = TheoremLibrary([TheoremEntry(ids[j], " ".join(vocab[j]), embedder.embed(" ".join(vocab[j]))) for j in range(n_theorems)])

    def hint(j, n_hint=cfg.hint_words, n_noise=cfg.noise_words):
        words = list(rng.choice(vocab[j], size=n_hint, replace=False)) + list(rng.choice(noise_pool, size=n_noise))
        rng.shuffle(words)
        return " ".join(words)

    samples = []
    for owner in range(n_theorems):
        for _ in range(chains_per_theorem):
            m = int(rng.integers(1, cfg.max_steps + 1))
            chain = [owner]
            for _ in range(m - 1):
                if rng.random() < cfg.switch_prob:
                    chain.append(int(rng.choice([j for j in range(n_theorems) if j != chain[-1]])))
                else:
                    chain.append(chain[-1])
            premises = [f"{hint(owner)} is {int(rng.integers(2, 99))}" for _ in range(2)]
            if rng.random() < cfg.distractor_prob:
                other = int(rng.choice([j for j in range(n_theorems) if j != owner]))
                premises.insert(int(rng.integers(0, 3)), f"{hint(other, n_hint=2, n_noise=2)} is {int(rng.integers(2, 99))}")
            question = "what is " + " ".join(rng.choice(noise_pool, size=3)) + "?"
            answer = str(int(rng.integers(10, 1000)))

            g = ReasoningGraph.new([(t, embedder.embed(t)) for t in premises + [question]])
            n_prem = len(premises)
            steps = []
            for t, j in enumerate(chain):
                entry = lib[ids[j]]
                chosen = select_premises(g, entry, cfg.premise_k, cfg.premise_min_sim)
                used = [_node_to_ref(nid, n_prem) for nid in chosen if nid != n_prem]
                if not used:
                    used = [0]
                if t + 1 < m:
                    result = f"so {hint(chain[t + 1])} gives {int(rng.integers(2, 999))}"
                else:
                    result = f"therefore the result is {answer}. ANSWER: {answer}"
                steps.append(Step(f"apply {ids[j]}", ids[j], used, result))
                premise_nodes = [_ref_to_node(u, n_prem) for u in used]
                g = g.expand(entry.statement, entry.embedding, premise_nodes, result, embedder.embed(result))
            samples.append(TrainingSample(question, premises, answer, steps))
    return samples, lib


def _node_to_ref(node_id: int, n_prem: int) -> int:
    # node layout: premises, question, then (theorem, conclusion) per step
    if node_id < n_prem:
        return node_id
    return n_prem + (node_id - n_prem - 2) // 2


def _ref_to_node(ref: int, n_prem: int) -> int:
    if ref < n_prem:
        return ref
    return n_prem + 2 + 2 * (ref - n_prem)
