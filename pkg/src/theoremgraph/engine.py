"""The closed inference loop: encode -> match -> generate -> expand."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import ReasoningError, TraceCorrupt
from .gnn import GnnConfig, GnnParams, average_encode, encode
from .graph import ReasoningGraph
from .llm import Conclusion, LlmBackendConfig, PromptSpec, make_backend, render_prompt
from .matcher import DEFAULT_PREMISE_K, DEFAULT_PREMISE_MIN_SIM, TheoremLibrary, select, select_premises

TERMINATIONS = ("answered", "max_steps", "below_score_floor")
RANKING_KEEP = 5


@dataclass(frozen=True)
class EngineConfig:
    max_inference_steps: int = 8
    min_theorem_score: float = -1.0
    encoder: str = "gnn"
    premise_k: int = DEFAULT_PREMISE_K
    premise_min_sim: float = DEFAULT_PREMISE_MIN_SIM

    def __post_init__(self):
        if self.max_inference_steps < 1:
            raise ValueError("max_inference_steps must be >= 1")
        if self.encoder not in ("gnn", "average"):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.premise_k < 1:
            raise ValueError("premise_k must be >= 1")


@dataclass(frozen=True)
class TraceStep:
    step: int
    selected: tuple  # (theorem id, score)
    ranking: tuple  # top entries of the full ranking
    premise_ids: tuple
    prompt: str
    conclusion: str
    is_final: bool

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "selected": list(self.selected),
            "ranking": [list(r) for r in self.ranking],
            "premise_ids": list(self.premise_ids),
            "prompt": self.prompt,
            "conclusion": self.conclusion,
            "is_final": self.is_final,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceStep":
        return cls(
            int(d["step"]),
            (d["selected"][0], float(d["selected"][1])),
            tuple((r[0], float(r[1])) for r in d["ranking"]),
            tuple(int(p) for p in d["premise_ids"]),
            d["prompt"],
            d["conclusion"],
            bool(d["is_final"]),
        )


@dataclass
class RunResult:
    question: str
    premises: list
    final_answer: Optional[str]
    termination: str
    trace: list = field(default_factory=list)
    final_graph: Optional[ReasoningGraph] = None

    def to_dict(self, config: Optional[dict] = None) -> dict:
        out = {
            "question": self.question,
            "premises": list(self.premises),
            "termination": self.termination,
            "final_answer": self.final_answer,
            "steps": [s.to_dict() for s in self.trace],
            "graph": self.final_graph.to_dict() if self.final_graph is not None else None,
        }
        if config is not None:
            out = {"config": config, **out}
        return out

    def to_json(self, config: Optional[dict] = None) -> str:
        return json.dumps(self.to_dict(config), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        graph = ReasoningGraph.from_dict(d["graph"]) if d.get("graph") else None
        return cls(
            d["question"],
            list(d["premises"]),
            d.get("final_answer"),
            d["termination"],
            [TraceStep.from_dict(s) for s in d["steps"]],
            graph,
        )


def initial_graph(question: str, premises: Sequence[str], embedder) -> ReasoningGraph:
    texts = list(premises) + [question]
    return ReasoningGraph.new([(t, embedder.embed(t)) for t in texts])


def run(
    question: str,
    premises: Sequence[str],
    lib: TheoremLibrary,
    params: Optional[GnnParams],
    gnn_cfg: Optional[GnnConfig],
    engine_cfg: EngineConfig,
    llm,
    embedder,
) -> RunResult:
    """Reason from ``premises`` toward an answer for ``question``.

    ``llm`` is a backend object or an :class:`LlmBackendConfig` (a fresh
    backend is built per run). With ``engine_cfg.encoder == "average"`` the
    GNN parameters are never read and may be ``None``. On error the exception
    is re-raised with ``partial_trace`` and ``partial_graph`` attached.
    """
    if not premises:
        raise ValueError("at least one premise is required")
    if not question:
        raise ValueError("question must be nonempty")
    backend = make_backend(llm) if isinstance(llm, LlmBackendConfig) else llm
    use_gnn = engine_cfg.encoder == "gnn"
    if use_gnn and (params is None or gnn_cfg is None):
        raise ValueError("gnn encoder requires parameters and a config")

    g = initial_graph(question, premises, embedder)
    trace: list[TraceStep] = []
    termination = "max_steps"
    answer = None
    try:
        for t in range(engine_cfg.max_inference_steps):
            state = encode(g, params, gnn_cfg)[0] if use_gnn else average_encode(g)
            match = select(state, lib)
            if match.score < engine_cfg.min_theorem_score:
                termination = "below_score_floor"
                break
            entry = lib[match.selected]
            premise_ids = select_premises(g, entry, engine_cfg.premise_k, engine_cfg.premise_min_sim)
            prompt = render_prompt(PromptSpec([g.nodes[i].text for i in premise_ids], entry.statement))
            conclusion: Conclusion = backend.generate(prompt)
            g = g.expand(entry.statement, entry.embedding, premise_ids, conclusion.text, embedder.embed(conclusion.text))
            trace.append(
                TraceStep(
                    t,
                    (match.selected, match.score),
                    match.ranking[:RANKING_KEEP],
                    tuple(premise_ids),
                    prompt,
                    conclusion.text,
                    conclusion.is_final,
                )
            )
            if conclusion.is_final:
                termination = "answered"
                answer = conclusion.answer
                break
    except Exception as exc:
        exc.partial_trace = trace
        exc.partial_graph = g
        raise
    return RunResult(question, list(premises), answer, termination, trace, g)


def replay(
    trace: Sequence[TraceStep],
    lib: TheoremLibrary,
    question: str,
    premises: Sequence[str],
    embedder,
    reference: Optional[ReasoningGraph] = None,
) -> ReasoningGraph:
    """Rebuild the final graph from a trace alone; optionally check it against ``reference``."""
    g = initial_graph(question, premises, embedder)
    for expected, st in enumerate(trace):
        if st.step != expected:
            raise TraceCorrupt(f"trace step {st.step} found where {expected} was expected")
        theorem_id = st.selected[0]
        if theorem_id not in lib:
            raise TraceCorrupt(f"step {st.step}: theorem {theorem_id!r} not in library")
        if st.ranking and st.ranking[0][0] != theorem_id:
            raise TraceCorrupt(f"step {st.step}: selected theorem is not the top of its ranking")
        if st.is_final and expected != len(trace) - 1:
            raise TraceCorrupt(f"step {st.step}: final conclusion is not the last step")
        entry = lib[theorem_id]
        try:
            g = g.expand(entry.statement, entry.embedding, list(st.premise_ids), st.conclusion, embedder.embed(st.conclusion))
        except ReasoningError as exc:
            raise TraceCorrupt(f"step {st.step}: {exc}") from exc
    if reference is not None and not g.same_as(reference):
        raise TraceCorrupt("replayed graph differs from the reference graph")
    return g


def write_trace(result: RunResult, path, config: Optional[dict] = None) -> None:
    Path(path).write_text(result.to_json(config), encoding="utf-8")


def load_trace(path) -> RunResult:
    return RunResult.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
