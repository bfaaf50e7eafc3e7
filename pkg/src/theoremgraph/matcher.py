"""Theorem library and similarity-based theorem/premise selection."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .embed import UNIT_TOL, check_unit
from .errors import DimensionMismatch, EmptyLibrary, NoEligibleNodes, NonUnitEmbedding
from .graph import PREMISE_KINDS, ReasoningGraph

DEFAULT_PREMISE_K = 2
DEFAULT_PREMISE_MIN_SIM = 0.25


@dataclass(frozen=True, eq=False)
class TheoremEntry:
    id: str
    statement: str
    embedding: np.ndarray


class TheoremLibrary:
    """Read-only, ordered collection of theorems backed by one embedding matrix."""

    def __init__(self, entries: Sequence[TheoremEntry]):
        entries = tuple(entries)
        if not entries:
            raise EmptyLibrary("theorem library is empty")
        dim = np.asarray(entries[0].embedding).shape[0]
        for e in entries:
            check_unit(e.embedding, dim)
        self._setup([e.id for e in entries], [e.statement for e in entries], np.stack([e.embedding for e in entries]))

    @classmethod
    def from_matrix(cls, ids: Sequence[str], statements: Sequence[str], matrix: np.ndarray) -> "TheoremLibrary":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] == 0:
            raise EmptyLibrary("theorem library is empty")
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise NonUnitEmbedding("library embeddings must be unit norm")
        lib = cls.__new__(cls)
        lib._setup(list(ids), list(statements), matrix)
        return lib

    def _setup(self, ids, statements, matrix):
        if len(ids) != len(statements) or len(ids) != matrix.shape[0]:
            raise ValueError("ids, statements and embeddings must align")
        if len(set(ids)) != len(ids):
            raise ValueError("theorem ids must be unique")
        for i, text in zip(ids, statements):
            if not text:
                raise ValueError(f"theorem {i} has an empty statement")
        self._ids = [str(i) for i in ids]
        self._statements = list(statements)
        self._index = {t: i for i, t in enumerate(self._ids)}
        self.matrix = np.array(matrix, dtype=np.float64)
        self.matrix.flags.writeable = False
        self.dim = self.matrix.shape[1]

    def entry(self, i: int) -> TheoremEntry:
        return TheoremEntry(self._ids[i], self._statements[i], self.matrix[i])

    @property
    def entries(self) -> tuple:
        return tuple(self.entry(i) for i in range(len(self._ids)))

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def __len__(self):
        return len(self._ids)

    def __contains__(self, theorem_id) -> bool:
        return theorem_id in self._index

    def __getitem__(self, theorem_id: str) -> TheoremEntry:
        return self.entry(self._index[theorem_id])

    def index(self, theorem_id: str) -> int:
        return self._index[theorem_id]

    def to_json(self, include_embeddings: bool = True) -> str:
        recs = []
        for e in self.entries:
            rec = {"id": e.id, "statement": e.statement}
            if include_embeddings:
                rec["embedding"] = e.embedding.tolist()
            recs.append(rec)
        return json.dumps(recs)

    def save(self, path, include_embeddings: bool = True) -> None:
        Path(path).write_text(self.to_json(include_embeddings))

    @classmethod
    def from_records(cls, records, embedder=None) -> "TheoremLibrary":
        entries = []
        for rec in records:
            emb = rec.get("embedding")
            if emb is None:
                if embedder is None:
                    raise ValueError(f"theorem {rec.get('id')!r} has no embedding and no embedder was given")
                emb = embedder.embed(rec["statement"])
            entries.append(TheoremEntry(str(rec["id"]), rec["statement"], np.asarray(emb, dtype=np.float64)))
        return cls(entries)

    @classmethod
    def load(cls, path, embedder=None, write_back: bool = False) -> "TheoremLibrary":
        """Load a JSON array of ``{id, statement, embedding?}``.

        Missing embeddings are computed with ``embedder``; with ``write_back``
        the completed library is saved over the original file.
        """
        records = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(records, dict):
            records = records["theorems"]
        missing = any("embedding" not in r for r in records)
        lib = cls.from_records(records, embedder)
        if missing and write_back:
            lib.save(path)
        return lib


@dataclass(frozen=True)
class MatchResult:
    selected: str
    score: float
    ranking: tuple  # ((id, score), ...) sorted by descending score


def score_all(r: np.ndarray, lib: TheoremLibrary) -> list[tuple[str, float]]:
    return list(zip(lib.ids, _scores(r, lib).tolist()))


def _scores(r, lib: TheoremLibrary) -> np.ndarray:
    if len(lib) == 0:
        raise EmptyLibrary("theorem library is empty")
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (lib.dim,):
        raise DimensionMismatch(f"state has shape {r.shape}, library dim is {lib.dim}")
    # row-wise reduction (not a BLAS matvec) so identical rows score bit-identically
    return np.clip((lib.matrix * r).sum(axis=1), -1.0, 1.0)


def select(r: np.ndarray, lib: TheoremLibrary) -> MatchResult:
    scores = _scores(r, lib)
    # stable sort keeps library order among equal scores
    order = np.argsort(-scores, kind="stable")
    ids = lib.ids
    ranking = tuple((ids[i], float(scores[i])) for i in order)
    return MatchResult(ranking[0][0], ranking[0][1], ranking)


def select_premises(
    g: ReasoningGraph,
    theorem: TheoremEntry,
    k: int = DEFAULT_PREMISE_K,
    min_sim: float = DEFAULT_PREMISE_MIN_SIM,
) -> list[int]:
    """Pick up to ``k`` condition/conclusion nodes most similar to the theorem.

    Nodes scoring below ``min_sim`` are dropped, but at least the single best
    node is always returned. Ties go to the lower node id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    eligible = [n for n in g.nodes if n.kind in PREMISE_KINDS]
    if not eligible:
        raise NoEligibleNodes("graph has no condition or conclusion nodes")
    sims = np.stack([n.embedding for n in eligible]) @ np.asarray(theorem.embedding)
    order = sorted(range(len(eligible)), key=lambda i: -sims[i])
    chosen = [eligible[i].id for i in order[:k] if sims[i] >= min_sim]
    return chosen or [eligible[order[0]].id]
