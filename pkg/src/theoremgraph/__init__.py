"""Theorem-guided multi-step reasoning over an evolving graph of conditions,
theorems and conclusions, with a trainable relational graph encoder."""

__version__ = "0.1.0"

from .embed import EmbedderConfig, LocalEmbedder, make_embedder
from .engine import EngineConfig, RunResult, replay, run
from .gnn import GnnConfig, GnnParams, average_encode, backward, encode, init_params, load_params, save_params
from .graph import EdgeKind, NodeKind, ReasoningGraph, export, validate
from .llm import LlmBackendConfig, ScriptedBackend, make_backend
from .matcher import TheoremEntry, TheoremLibrary, select, select_premises
from .trainer import TrainConfig, build_step_samples, infonce_loss, train

__all__ = [
    "EdgeKind",
    "EmbedderConfig",
    "EngineConfig",
    "GnnConfig",
    "GnnParams",
    "LlmBackendConfig",
    "LocalEmbedder",
    "NodeKind",
    "ReasoningGraph",
    "RunResult",
    "ScriptedBackend",
    "TheoremEntry",
    "TheoremLibrary",
    "TrainConfig",
    "average_encode",
    "backward",
    "build_step_samples",
    "encode",
    "export",
    "infonce_loss",
    "init_params",
    "load_params",
    "make_backend",
    "make_embedder",
    "replay",
    "run",
    "save_params",
    "select",
    "select_premises",
    "train",
    "validate",
]
