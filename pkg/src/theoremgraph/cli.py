"""Command-line entry point: preprocess, train, infer, eval, export.

Exit codes: 0 success, 2 usage or validation error, 3 numeric failure during
training or encoding, 4 remote backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import httpx

from . import __version__
from .data import (
    DEFAULT_MERGE_THRESHOLD,
    SplitSpec,
    SyntheticConfig,
    cluster_theorems,
    generate_synthetic,
    load_eval,
    load_training,
    save_jsonl,
    split,
    to_eval_sample,
)
from .embed import DEFAULT_DIM, EmbedderConfig, make_embedder
from .engine import EngineConfig, run, write_trace
from .errors import NumericFailure, RemoteUnavailable, ZeroNorm
from .evaluation import evaluate, gold_path_script, markdown_table, write_report
from .gnn import GnnConfig, load_params
from .graph import ReasoningGraph, export, import_json
from .llm import LlmBackendConfig, load_script
from .matcher import TheoremLibrary
from .trainer import TrainConfig, build_step_samples, train

log = logging.getLogger("theoremgraph")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_REMOTE = 0, 2, 3, 4


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class CliConfig:
    """Flat view of every tunable; a config file may set any subset of these keys."""

    # trainer
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-2
    temperature: float = 0.1
    negatives: Optional[int] = None
    balance_labels: bool = True
    samples_per_label_min: int = 200
    samples_per_label_max: int = 600
    # encoder
    layers: int = 2
    hidden_dim: int = 128
    seed: int = 0
    # embedder
    embed_backend: str = "local"
    embed_dim: int = DEFAULT_DIM
    embed_endpoint: Optional[str] = None
    embed_model: str = "text-embedding-ada-002"
    embed_cache: Optional[str] = None
    # engine
    max_inference_steps: int = 8
    min_theorem_score: float = -1.0
    encoder: str = "gnn"
    premise_k: int = 2
    premise_min_sim: float = 0.25
    # generation backend
    llm_endpoint: Optional[str] = None
    llm_model: str = "gpt-3.5-turbo"
    llm_temperature: float = 0.0
    llm_timeout: float = 60.0
    max_retries: int = 3
    api_key_env: str = "OPENAI_API_KEY"
    # data / eval
    train_fraction: float = 0.8
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD
    switch_prob: float = 0.1
    repeats: int = 3
    match_mode: str = "numeric"

    def trainer(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            temperature=self.temperature,
            negatives=self.negatives,
            seed=self.seed,
            balance_labels=self.balance_labels,
            samples_per_label_min=self.samples_per_label_min,
            samples_per_label_max=self.samples_per_label_max,
        )

    def gnn(self) -> GnnConfig:
        return GnnConfig(
            layers=self.layers, hidden_dim=self.hidden_dim, input_dim=self.embed_dim, out_dim=self.embed_dim, seed=self.seed
        )

    def embedder(self) -> EmbedderConfig:
        return EmbedderConfig(
            backend=self.embed_backend,
            dim=self.embed_dim,
            endpoint=self.embed_endpoint,
            model=self.embed_model,
            cache_path=self.embed_cache,
            max_retries=self.max_retries,
            api_key_env=self.api_key_env,
        )

    def engine(self) -> EngineConfig:
        return EngineConfig(
            max_inference_steps=self.max_inference_steps,
            min_theorem_score=self.min_theorem_score,
            encoder=self.encoder,
            premise_k=self.premise_k,
            premise_min_sim=self.premise_min_sim,
        )

    def llm(self, backend: str, script_path: Optional[str]) -> LlmBackendConfig:
        if backend == "scripted":
            if not script_path:
                raise UsageError("--backend scripted requires --script")
            return LlmBackendConfig(kind="scripted", **load_script(_existing(script_path, "script")))
        return LlmBackendConfig(
            kind="remote",
            endpoint=self.llm_endpoint,
            model=self.llm_model,
            temperature=self.llm_temperature,
            timeout=self.llm_timeout,
            max_retries=self.max_retries,
            api_key_env=self.api_key_env,
        )

    def validate(self) -> "CliConfig":
        # constructing every module config runs its own invariant checks
        self.trainer(), self.gnn(), self.embedder(), self.engine()
        SplitSpec(self.train_fraction, self.seed)
        if not 0.0 < self.merge_threshold < 1.0:
            raise UsageError(f"merge_threshold must be in (0, 1), got {self.merge_threshold}")
        if not 0.0 <= self.switch_prob <= 1.0:
            raise UsageError("switch_prob must be in [0, 1]")
        if self.repeats < 1:
            raise UsageError("repeats must be >= 1")
        if self.match_mode not in ("numeric", "normalized_text"):
            raise UsageError(f"unknown match_mode {self.match_mode!r}")
        return self


_CONFIG_FIELDS = {f.name: f for f in fields(CliConfig)}


def _coerce(key: str, value):
    default = _CONFIG_FIELDS[key].default
    if value is None or default is None:
        return value
    kind = type(default)
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise UsageError(f"config key {key!r} expects a boolean, got {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise UsageError(f"config key {key!r} expects {kind.__name__}, got {value!r}") from None


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> CliConfig:
    """Merge a flat JSON config file with flag overrides; unknown keys are an error."""
    values = {}
    if path:
        try:
            doc = json.loads(_existing(path, "config").read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        values.update(doc)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(values) - set(_CONFIG_FIELDS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return CliConfig(**{k: _coerce(k, v) for k, v in values.items()}).validate()


def _parse_sets(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _read_lines_or_json(path, what: str) -> list[str]:
    text = _existing(path, what).read_text(encoding="utf-8")
    if text.lstrip().startswith("["):
        items = json.loads(text)
        if not all(isinstance(x, str) for x in items):
            raise UsageError(f"{what} file must be a JSON array of strings")
    else:
        items = text.splitlines()
    items = [x.strip() for x in items if x.strip()]
    if not items:
        raise UsageError(f"{what} file {path} is empty")
    return items


def _load_library(path, embedder, cfg: CliConfig) -> TheoremLibrary:
    lib = TheoremLibrary.load(_existing(path, "library"), embedder)
    if lib.dim != cfg.embed_dim:
        raise UsageError(f"library embeddings have dim {lib.dim}, config says {cfg.embed_dim}")
    return lib


def _load_checkpoint(path, lib: TheoremLibrary):
    params, gnn_cfg = load_params(_existing(path, "checkpoint"))
    if gnn_cfg.out_dim != lib.dim:
        raise UsageError(f"checkpoint output dim {gnn_cfg.out_dim} does not match library dim {lib.dim}")
    return params, gnn_cfg


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def _library_doc(lib: TheoremLibrary, echo: dict) -> dict:
    return {"config": echo, "theorems": json.loads(lib.to_json())}


# -- commands -----------------------------------------------------------------


def cmd_preprocess(args, cfg: CliConfig) -> int:
    embedder = make_embedder(cfg.embedder())
    echo = {"command": "preprocess", **asdict(cfg)}
    if args.synthetic:
        if args.n_theorems is None or args.chains is None or not args.out:
            raise UsageError("--synthetic needs --n-theorems, --chains and --out")
        seed = cfg.seed if args.seed is None else args.seed
        syn = SyntheticConfig(dim=cfg.embed_dim, switch_prob=cfg.switch_prob, premise_k=cfg.premise_k, premise_min_sim=cfg.premise_min_sim)
        samples, lib = generate_synthetic(args.n_theorems, args.chains, seed, syn, embedder)
        train_set, test_set = split(samples, SplitSpec(cfg.train_fraction, seed))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_jsonl(train_set, out / "train.jsonl")
        save_jsonl([to_eval_sample(s) for s in test_set], out / "test.jsonl")
        save_jsonl(test_set, out / "test_chains.jsonl")
        echo.update(seed=seed, n_theorems=args.n_theorems, chains=args.chains, synthetic=asdict(syn))
        _write_json(out / "library.json", _library_doc(lib, echo))
        _write_json(out / "script.json", gold_path_script(test_set, lib, embedder, cfg.engine()))
        _write_json(out / "manifest.json", {"config": echo, "n_train": len(train_set), "n_test": len(test_set), "n_theorems": len(lib)})
        print(f"wrote {len(train_set)} train / {len(test_set)} test chains and {len(lib)} theorems to {out}")
        return EXIT_OK
    if not args.candidates or not args.out_library:
        raise UsageError("give either --synthetic or --candidates with --out-library")
    threshold = cfg.merge_threshold if args.threshold is None else args.threshold
    if not 0.0 < threshold < 1.0:
        raise UsageError(f"--threshold must be in (0, 1), got {threshold}")
    candidates = _read_lines_or_json(args.candidates, "candidates")
    lib = cluster_theorems(candidates, embedder, threshold)
    echo["merge_threshold"] = threshold
    _write_json(Path(args.out_library), _library_doc(lib, echo))
    print(f"clustered {len(candidates)} candidates into {len(lib)} theorems -> {args.out_library}")
    return EXIT_OK


def cmd_train(args, cfg: CliConfig) -> int:
    embedder = make_embedder(cfg.embedder())
    lib = _load_library(args.library, embedder, cfg)
    dataset = load_training(_existing(args.train, "training"), lib)
    if not dataset:
        raise UsageError(f"training file {args.train} has no records")
    steps = build_step_samples(dataset, lib, embedder)
    ckpt = Path(args.out_checkpoint)
    log_path = Path(args.log) if args.log else ckpt.with_suffix(".log.jsonl")
    best = ckpt.with_name(ckpt.stem + ".best" + ckpt.suffix)
    echo = {"command": "train", "cli": asdict(cfg), "train_file": str(Path(args.train).resolve())}
    params, history = train(
        steps, lib, cfg.trainer(), cfg.gnn(), log_path=log_path, checkpoint_path=ckpt, best_checkpoint_path=best, config_echo=echo
    )
    print("epoch\tmean_loss\ttop1\twall_ms")
    for rec in history:
        print(f"{rec.epoch}\t{rec.mean_loss:.6f}\t{rec.retrieval_top1:.4f}\t{rec.wall_ms:.0f}")
    if not args.no_figure:
        from .plotting import plot_history

        fig = plot_history(history, args.figure or ckpt.with_name(ckpt.stem + "_history.png"))
        print(f"figure: {fig}")
    print(f"checkpoint: {ckpt} (best: {best}); log: {log_path}")
    return EXIT_OK


def cmd_infer(args, cfg: CliConfig) -> int:
    embedder = make_embedder(cfg.embedder())
    lib = _load_library(args.library, embedder, cfg)
    premises = _read_lines_or_json(args.premises, "premises")
    llm_cfg = cfg.llm(args.backend, args.script)
    engine_cfg = cfg.engine()
    params = gnn_cfg = None
    if engine_cfg.encoder == "gnn":
        if not args.checkpoint:
            raise UsageError("the gnn encoder needs --checkpoint (or use --encoder average)")
        params, gnn_cfg = _load_checkpoint(args.checkpoint, lib)
    result = run(args.question, premises, lib, params, gnn_cfg, engine_cfg, llm_cfg, embedder)
    echo = {"command": "infer", "cli": asdict(cfg), "backend": args.backend, "checkpoint": args.checkpoint}
    if args.trace_out:
        write_trace(result, args.trace_out, echo)
    if args.dot_out:
        Path(args.dot_out).write_text(export(result.final_graph, "dot"), encoding="utf-8")
    if result.final_answer is None:
        print(f"no answer (termination: {result.termination}, steps: {len(result.trace)})", file=sys.stderr)
    else:
        print(result.final_answer)
    return EXIT_OK


def cmd_eval(args, cfg: CliConfig) -> int:
    embedder = make_embedder(cfg.embedder())
    lib = _load_library(args.library, embedder, cfg)
    samples = load_eval(_existing(args.test, "test"))
    if not samples:
        raise UsageError(f"test file {args.test} has no records")
    encoders = [e.strip() for e in args.encoders.split(",") if e.strip()]
    for e in encoders:
        if e not in ("gnn", "average"):
            raise UsageError(f"unknown encoder {e!r}")
    params = gnn_cfg = None
    if "gnn" in encoders:
        if not args.checkpoint:
            raise UsageError("evaluating the gnn encoder needs --checkpoint")
        params, gnn_cfg = _load_checkpoint(args.checkpoint, lib)
    repeats = cfg.repeats if args.repeats is None else args.repeats
    if repeats < 1:
        raise UsageError("--repeats must be >= 1")
    llm_cfg = cfg.llm(args.backend, args.script)
    meta = {"cli": asdict(cfg), "seeds": [cfg.seed], "checkpoint": args.checkpoint, "test_file": str(Path(args.test).resolve())}
    report = evaluate(
        samples, lib, embedder, llm_cfg, cfg.engine(),
        params=params, gnn_cfg=gnn_cfg, encoders=encoders, repeats=repeats, mode=cfg.match_mode, metadata=meta,
    )
    path = Path(args.report)
    write_report(report, path, "json")
    md = path.with_suffix(".md")
    write_report(report, md, "markdown")
    table = markdown_table(report)
    print(table, end="")
    if not args.no_figure:
        from .plotting import plot_eval_report

        print(f"figure: {plot_eval_report(report, path.with_suffix('.png'))}")
    print(f"report: {path} (table: {md})")
    return EXIT_OK


def cmd_export(args, cfg: CliConfig) -> int:
    doc = json.loads(_existing(args.graph, "graph").read_text(encoding="utf-8"))
    g = ReasoningGraph.from_dict(doc["graph"]) if "graph" in doc else import_json(json.dumps(doc))
    text = export(g, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="theoremgraph", description="Theorem-guided graph reasoning pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat for debug)")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", parents=[common], help="build a theorem library or a synthetic dataset")
    pre.add_argument("--candidates", help="candidate theorem statements (one per line or a JSON array)")
    pre.add_argument("--out-library")
    pre.add_argument("--threshold", type=float, help="cosine merge threshold in (0, 1)")
    pre.add_argument("--synthetic", action="store_true")
    pre.add_argument("--n-theorems", type=int)
    pre.add_argument("--chains", type=int, help="chains per theorem")
    pre.add_argument("--seed", type=int)
    pre.add_argument("--out", help="output directory for --synthetic")
    pre.set_defaults(func=cmd_preprocess)

    tr = sub.add_parser("train", parents=[common], help="train the graph encoder")
    tr.add_argument("--train", required=True)
    tr.add_argument("--library", required=True)
    tr.add_argument("--out-checkpoint", required=True)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--log", help="epoch log (JSON lines); default next to the checkpoint")
    tr.add_argument("--figure", help="training curve PNG; default next to the checkpoint")
    tr.add_argument("--no-figure", action="store_true")
    tr.set_defaults(func=cmd_train)

    inf = sub.add_parser("infer", parents=[common], help="answer one question")
    inf.add_argument("--question", required=True)
    inf.add_argument("--premises", required=True, help="premise file (one per line or a JSON array)")
    inf.add_argument("--library", required=True)
    inf.add_argument("--checkpoint")
    inf.add_argument("--encoder", choices=("gnn", "average"))
    inf.add_argument("--backend", choices=("remote", "scripted"), default="remote")
    inf.add_argument("--script")
    inf.add_argument("--endpoint", help="chat completion URL for --backend remote")
    inf.add_argument("--trace-out")
    inf.add_argument("--dot-out")
    inf.set_defaults(func=cmd_infer)

    ev = sub.add_parser("eval", parents=[common], help="compare encoders end to end")
    ev.add_argument("--test", required=True)
    ev.add_argument("--library", required=True)
    ev.add_argument("--checkpoint")
    ev.add_argument("--encoders", default="gnn,average")
    ev.add_argument("--repeats", type=int)
    ev.add_argument("--report", required=True, help="JSON report path; .md table and .png figure are written beside it")
    ev.add_argument("--backend", choices=("remote", "scripted"), default="remote")
    ev.add_argument("--script")
    ev.add_argument("--endpoint")
    ev.add_argument("--no-figure", action="store_true")
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("export", parents=[common], help="render a graph or trace file as DOT or JSON")
    ex.add_argument("--graph", required=True, help="graph JSON or trace JSON")
    ex.add_argument("--format", choices=("dot", "json"), default="dot")
    ex.add_argument("--out")
    ex.set_defaults(func=cmd_export)
    return p


def _overrides(args) -> dict:
    out = _parse_sets(getattr(args, "set", None))
    for flag, key in (("epochs", "epochs"), ("encoder", "encoder"), ("endpoint", "llm_endpoint")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        return args.func(args, cfg)
    except (NumericFailure, ZeroNorm) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RemoteUnavailable, httpx.HTTPError) as exc:
        print(f"error: remote backend failed: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except (UsageError, ValueError, KeyError, LookupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
