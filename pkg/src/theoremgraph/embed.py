"""Text embeddings and the cosine primitive.

All vectors handed out by this module are 1-D float64 arrays with unit L2
norm, so cosine similarity reduces to a dot product everywhere else.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import httpx
import numpy as np

from .errors import DimensionMismatch, EmptyText, NonUnitEmbedding, RemoteUnavailable, ZeroNorm

log = logging.getLogger(__name__)

DEFAULT_DIM = 1536
UNIT_TOL = 1e-9
LOCAL_SEED = b"theoremgraph-3gram-v1"


def normalize(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    n = float(np.linalg.norm(v))
    if not np.isfinite(n) or n < 1e-12:
        raise ZeroNorm(f"cannot normalize vector with norm {n}")
    return v / n


def check_unit(v: np.ndarray, dim: Optional[int] = None) -> np.ndarray:
    """Return ``v`` as float64 after checking dimension and unit norm."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"embedding must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatch(f"expected dim {dim}, got {v.shape[0]}")
    if abs(float(np.linalg.norm(v)) - 1.0) > UNIT_TOL:
        raise NonUnitEmbedding(f"embedding norm {np.linalg.norm(v)!r} is not 1")
    return v


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors (a plain dot product)."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare dims {a.shape} and {b.shape}")
    return float(np.dot(a, b))


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "local"
    dim: int = DEFAULT_DIM
    endpoint: Optional[str] = None
    model: str = "text-embedding-ada-002"
    cache_path: Optional[str] = None
    timeout: float = 30.0
    max_retries: int = 3
    api_key_env: str = "OPENAI_API_KEY"
    backoff_base: float = 0.25

    def __post_init__(self):
        if self.backend not in ("local", "remote"):
            raise ValueError(f"unknown embedder backend {self.backend!r}")
        if self.dim < 8:
            raise ValueError("embedding dim must be >= 8")
        if not 0 <= self.max_retries <= 5:
            raise ValueError("max_retries must be in [0, 5]")
        if self.backend == "remote" and not self.endpoint:
            raise ValueError("remote embedder needs an endpoint")


def _grams(text: str):
    padded = f" {text.lower()} "
    return Counter(padded[i : i + 3] for i in range(len(padded) - 2))


class LocalEmbedder:
    """Signed feature hashing of character 3-grams.

    Each gram lands in one of ``dim`` buckets; one bit of the same digest
    decides whether it adds or subtracts. The result is normalized, so the
    embedder is a pure function of ``(text, dim)``.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 8:
            raise ValueError("embedding dim must be >= 8")
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def _bucket(self, gram: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=LOCAL_SEED).digest(), "little")
        sign = 1.0 if (h >> 40) & 1 == 0 else -1.0
        return h % self.dim, sign

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        v = np.zeros(self.dim)
        for gram, count in sorted(_grams(text).items()):
            idx, sign = self._bucket(gram)
            v[idx] += sign * count
        out = normalize(v)
        out.flags.writeable = False
        self._cache[text] = out
        return out


class EmbeddingCache:
    """Append-only JSONL cache keyed by sha256 of the text."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._data: dict[tuple[str, int], np.ndarray] = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        rec = json.loads(line)
                        self._data[(rec["sha256"], rec["dim"])] = np.asarray(rec["values"], dtype=np.float64)

    @staticmethod
    def key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def get(self, text: str, dim: int):
        return self._data.get((self.key(text), dim))

    def put(self, text: str, values: np.ndarray):
        k = (self.key(text), len(values))
        with self._lock:
            if k in self._data:
                return
            self._data[k] = values
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as f:
                f.write(json.dumps({"sha256": k[0], "dim": k[1], "values": values.tolist()}) + "\n")


class RemoteEmbedder:
    """Embedding service client speaking ``{input: [texts], model}`` over HTTP."""

    def __init__(self, cfg: EmbedderConfig, client: Optional[httpx.Client] = None):
        self.cfg = cfg
        self.dim = cfg.dim
        self._client = client or httpx.Client(timeout=cfg.timeout)
        self._cache = EmbeddingCache(cfg.cache_path) if cfg.cache_path else None

    def _request(self, text: str) -> list:
        headers = {}
        key = os.environ.get(self.cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last = None
        for attempt in range(self.cfg.max_retries + 1):
            try:
                resp = self._client.post(
                    self.cfg.endpoint, json={"input": [text], "model": self.cfg.model}, headers=headers
                )
                resp.raise_for_status()
                return resp.json()["data"][0]["embedding"]
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = exc
                log.warning("embedding request attempt %d failed: %s", attempt + 1, type(exc).__name__)
                if attempt < self.cfg.max_retries:
                    time.sleep(self.cfg.backoff_base * 2**attempt)
        raise RemoteUnavailable(f"embedding endpoint failed after {self.cfg.max_retries + 1} attempts: {last}")

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        if self._cache is not None:
            hit = self._cache.get(text, self.dim)
            if hit is not None:
                return normalize(hit)
        values = np.asarray(self._request(text), dtype=np.float64)
        if values.shape != (self.dim,):
            raise DimensionMismatch(f"remote returned dim {values.size}, expected {self.dim}")
        out = normalize(values)
        if self._cache is not None:
            self._cache.put(text, out)
        return out


def make_embedder(cfg: EmbedderConfig):
    if cfg.backend == "local":
        return LocalEmbedder(cfg.dim)
    return RemoteEmbedder(cfg)


def embed_text(cfg: EmbedderConfig, text: str) -> np.ndarray:
    return make_embedder(cfg).embed(text)
