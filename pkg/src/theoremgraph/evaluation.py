"""End-to-end accuracy evaluation and report writing."""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import asdict, dataclass, field, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Optional, Sequence

from .engine import EngineConfig, initial_graph, run
from .errors import UnparseableNumeric
from .llm import PromptSpec, prompt_key, render_prompt
from .matcher import TheoremLibrary, select_premises

log = logging.getLogger(__name__)

TERMINATION_KEYS = ("answered", "max_steps", "below_score_floor", "error")
REPORT_COLUMNS = ("config", "n", "accuracy", "mean_steps") + TERMINATION_KEYS

_STRIP_NUMERIC = re.compile(r"[\s,$%€£¥]")


def _to_number(text: str) -> Decimal:
    cleaned = _STRIP_NUMERIC.sub("", text or "")
    try:
        value = Decimal(cleaned)
    except InvalidOperation:
        raise UnparseableNumeric(f"cannot parse {text!r} as a number") from None
    if not value.is_finite():
        raise UnparseableNumeric(f"{text!r} is not a finite number")
    return value


def _normalize_text(text: str) -> str:
    text = " ".join(text.lower().split())
    return text.rstrip(".!?;:,").rstrip()


def answer_match(predicted: Optional[str], gold: str, mode: str = "numeric") -> bool:
    """Compare a predicted answer with the gold one.

    ``numeric`` strips currency symbols, commas and percent signs and allows
    1e-6 relative error; ``normalized_text`` compares lowercased,
    whitespace-collapsed text without terminal punctuation.
    """
    if not gold:
        raise ValueError("gold answer must be nonempty")
    if predicted is None:
        return False
    if mode == "numeric":
        a, b = _to_number(predicted), _to_number(gold)
        scale = max(abs(a), abs(b))
        return abs(a - b) <= Decimal("1e-6") * scale
    if mode == "normalized_text":
        return _normalize_text(predicted) == _normalize_text(gold)
    raise ValueError(f"unknown match mode {mode!r}")


@dataclass
class EvalRow:
    config: str
    n_samples: int
    accuracy: float
    mean_steps: float
    terminations: dict
    repeat_accuracies: list = field(default_factory=list)


@dataclass
class EvalReport:
    rows: list
    metadata: dict

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls([EvalRow(**r) for r in d["rows"]], dict(d["metadata"]))


def evaluate(
    samples: Sequence,
    lib: TheoremLibrary,
    embedder,
    llm,
    engine_cfg: EngineConfig,
    *,
    params=None,
    gnn_cfg=None,
    encoders: Sequence[str] = ("gnn", "average"),
    repeats: int = 3,
    mode: str = "numeric",
    metadata: Optional[dict] = None,
) -> EvalReport:
    """Run the engine over every sample, ``repeats`` times, once per encoder.

    A run that raises counts as incorrect and lands in the ``error`` bucket.
    Accuracy is the mean over repeats of the fraction of matched answers; the
    termination histogram is averaged over repeats so it sums to ``n``.
    """
    if not samples:
        raise ValueError("no evaluation samples")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rows = []
    for enc in encoders:
        cfg = replace(engine_cfg, encoder=enc)
        hist = dict.fromkeys(TERMINATION_KEYS, 0)
        accs, steps = [], []
        for rep in range(repeats):
            hits = 0
            for i, s in enumerate(samples):
                try:
                    res = run(s.question, s.premises, lib, params, gnn_cfg, cfg, llm, embedder)
                except Exception as exc:
                    log.info("%s sample %d repeat %d failed: %s", enc, i, rep, exc)
                    hist["error"] += 1
                    steps.append(len(getattr(exc, "partial_trace", [])))
                    continue
                hist[res.termination] += 1
                steps.append(len(res.trace))
                try:
                    hits += answer_match(res.final_answer, s.answer, mode)
                except UnparseableNumeric as exc:
                    log.info("%s sample %d: %s", enc, i, exc)
            accs.append(hits / len(samples))
        rows.append(
            EvalRow(
                config=enc,
                n_samples=len(samples),
                accuracy=sum(accs) / repeats,
                mean_steps=sum(steps) / len(steps),
                terminations={k: v / repeats for k, v in hist.items()},
                repeat_accuracies=accs,
            )
        )
    meta = {
        "library_size": len(lib),
        "repeats": repeats,
        "match_mode": mode,
        "engine": asdict(engine_cfg),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        **(metadata or {}),
    }
    return EvalReport(rows, meta)


def markdown_table(report: EvalReport) -> str:
    lines = ["| " + " | ".join(REPORT_COLUMNS) + " |", "|" + "---|" * len(REPORT_COLUMNS)]
    for r in report.rows:
        cells = [r.config, str(r.n_samples), f"{r.accuracy:.4f}", f"{r.mean_steps:.2f}"]
        cells += [f"{r.terminations.get(k, 0):g}" for k in TERMINATION_KEYS]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path, fmt: str = "json", figure: bool = False) -> Optional[Path]:
    """Write the report; with ``figure`` also render a PNG next to it and return its path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    elif fmt in ("markdown", "markdown-table"):
        path.write_text(markdown_table(report), encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if figure:
        from .plotting import plot_eval_report

        return plot_eval_report(report, path.with_suffix(".png"))
    return None


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def gold_path_script(samples: Sequence, lib: TheoremLibrary, embedder, engine_cfg: EngineConfig = EngineConfig()) -> dict:
    """Keyed script that answers exactly the prompts met along each annotated chain.

    The engine's own premise selection is replayed on the gold theorem
    sequence, so a run reproduces a chain's prompts iff it selects the gold
    theorem at every step; any other prompt is absent from the table.
    """
    table = {}
    for s in samples:
        g = initial_graph(s.question, s.premises, embedder)
        for st in s.steps:
            entry = lib[st.theorem_id]
            ids = select_premises(g, entry, engine_cfg.premise_k, engine_cfg.premise_min_sim)
            prompt = render_prompt(PromptSpec([g.nodes[i].text for i in ids], entry.statement))
            table[prompt_key(prompt)] = st.result
            g = g.expand(entry.statement, entry.embedding, ids, st.result, embedder.embed(st.result))
    return table
