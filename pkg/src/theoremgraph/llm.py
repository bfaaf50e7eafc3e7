"""Prompt rendering and conclusion-generation backends.

Two backends share one ``generate(prompt) -> Conclusion`` surface: a remote
chat-completion client and a scripted backend (canned responses in order, or
a table keyed by the sha256 of the exact prompt) for offline runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import httpx

from .errors import EmptyResponse, PromptTooLong, RemoteUnavailable, ResponseTooLong, ScriptExhausted

log = logging.getLogger(__name__)

ANSWER_MARKER = "ANSWER:"
MAX_PROMPT_CHARS = 32_000


@dataclass(frozen=True)
class PromptSpec:
    premise_texts: tuple
    theorem_statement: str

    def __post_init__(self):
        object.__setattr__(self, "premise_texts", tuple(self.premise_texts))
        if not self.premise_texts:
            raise ValueError("a prompt needs at least one premise")
        if any(not p for p in self.premise_texts):
            raise ValueError("premise texts must be nonempty")
        if not self.theorem_statement:
            raise ValueError("theorem statement must be nonempty")


def render_prompt(p: PromptSpec, max_chars: int = MAX_PROMPT_CHARS) -> str:
    text = (
        "Given conditions: "
        + "; ".join(p.premise_texts)
        + "; and Theorem: "
        + p.theorem_statement
        + ', derive the next conclusion. If this yields the final answer, end with "ANSWER: <answer>".'
    )
    if len(text) > max_chars:
        raise PromptTooLong(f"prompt is {len(text)} characters, limit is {max_chars}")
    return text


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Conclusion:
    text: str

    @property
    def is_final(self) -> bool:
        return ANSWER_MARKER in self.text

    @property
    def answer(self) -> Optional[str]:
        if not self.is_final:
            return None
        return self.text.rsplit(ANSWER_MARKER, 1)[1].strip()


def _conclusion(raw) -> Conclusion:
    text = (raw or "").strip()
    if not text:
        raise EmptyResponse("backend returned an empty response")
    return Conclusion(text)


@dataclass(frozen=True)
class LlmBackendConfig:
    kind: str = "scripted"
    endpoint: Optional[str] = None
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    timeout: float = 60.0
    max_retries: int = 3
    api_key_env: str = "OPENAI_API_KEY"
    backoff_base: float = 0.25
    max_response_chars: int = 16_000
    script: Optional[Sequence[str]] = None  # sequential mode
    table: Optional[dict] = None  # keyed mode: sha256(prompt) -> response
    fallback: Optional[str] = None  # keyed mode: response for unknown prompts

    def __post_init__(self):
        if self.kind not in ("remote", "scripted"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "scripted" and not (self.script or self.table):
            raise ValueError("scripted backend needs a nonempty script or table")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend needs an endpoint")
        if not 0 <= self.max_retries <= 5:
            raise ValueError("max_retries must be in [0, 5]")


class ScriptedBackend:
    """Canned responses. Sequential mode is single-consumer: call order matters."""

    def __init__(self, script: Optional[Sequence[str]] = None, table: Optional[dict] = None, fallback: Optional[str] = None):
        if not script and not table:
            raise ValueError("scripted backend needs a nonempty script or table")
        self.script = list(script) if script else None
        self.table = dict(table) if table else None
        self.fallback = fallback
        self.calls = 0

    def generate(self, prompt: str) -> Conclusion:
        if not prompt:
            raise ValueError("prompt must be nonempty")
        self.calls += 1
        if self.table is not None:
            raw = self.table.get(prompt_key(prompt), self.fallback)
            if raw is None:
                raise ScriptExhausted(f"no scripted response for prompt {prompt_key(prompt)[:12]}")
            return _conclusion(raw)
        if self.calls > len(self.script):
            raise ScriptExhausted(f"script has {len(self.script)} responses, call {self.calls} requested")
        return _conclusion(self.script[self.calls - 1])


class RemoteBackend:
    """Chat-completion client: ``{model, messages: [{role, content}], temperature}``."""

    def __init__(self, cfg: LlmBackendConfig, client: Optional[httpx.Client] = None):
        self.cfg = cfg
        self._client = client or httpx.Client(timeout=cfg.timeout)

    def generate(self, prompt: str) -> Conclusion:
        if not prompt:
            raise ValueError("prompt must be nonempty")
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
        }
        headers = {}
        key = os.environ.get(self.cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        attempts = self.cfg.max_retries + 1
        last = None
        for attempt in range(attempts):
            try:
                resp = self._client.post(self.cfg.endpoint, json=body, headers=headers)
                resp.raise_for_status()
                content = resp.json()["choices"][0]["message"]["content"]
                break
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                log.warning("chat request attempt %d/%d failed: %s", attempt + 1, attempts, type(exc).__name__)
                if attempt + 1 < attempts:
                    time.sleep(self.cfg.backoff_base * 2**attempt)
        else:
            raise RemoteUnavailable(f"chat endpoint failed after {attempts} attempts: {last}")
        if content and len(content) > self.cfg.max_response_chars:
            raise ResponseTooLong(f"response of {len(content)} characters exceeds limit {self.cfg.max_response_chars}")
        return _conclusion(content)


def make_backend(cfg: LlmBackendConfig, client: Optional[httpx.Client] = None):
    if cfg.kind == "scripted":
        return ScriptedBackend(cfg.script, cfg.table, cfg.fallback)
    return RemoteBackend(cfg, client)


def generate(backend, prompt: str) -> Conclusion:
    if isinstance(backend, LlmBackendConfig):
        backend = make_backend(backend)
    return backend.generate(prompt)


def load_script(path) -> dict:
    """Read a script file: a JSON array (sequential) or an object (keyed by prompt hash)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, list):
        if not all(isinstance(x, str) for x in data):
            raise ValueError("sequential script must be an array of strings")
        return {"script": data}
    if isinstance(data, dict):
        return {"table": {str(k): str(v) for k, v in data.items()}}
    raise ValueError("script file must hold a JSON array or object")
