"""Acceptance gate: one test per criterion, each logging a PASS/FAIL line.

The lines are printed at the end of the pytest run (see conftest.py).
"""

import json
import math
import time

import numpy as np
import pytest

from helpers import (
    FIXTURE_DIM,
    FIXTURE_PREMISES,
    FIXTURE_QUESTION,
    FIXTURE_SCRIPT,
    FIXTURE_THEOREMS,
    fixture_embedder,
    random_graph,
    relabel,
    text_library,
    unit,
)
from theoremgraph.data import (
    SplitSpec,
    SyntheticConfig,
    generate_synthetic,
    load_training,
    split,
    to_eval_sample,
)
from theoremgraph.embed import LocalEmbedder
from theoremgraph.engine import EngineConfig, run
from theoremgraph.errors import ParseError, SchemaViolation
from theoremgraph.evaluation import evaluate, gold_path_script
from theoremgraph.gnn import GnnConfig, backward, encode, init_params
from theoremgraph.graph import EdgeKind, ReasoningGraph, validate
from theoremgraph.llm import LlmBackendConfig, ScriptedBackend
from theoremgraph.matcher import TheoremLibrary, select
from theoremgraph.trainer import TrainConfig, build_step_samples, infonce_loss, train


def _record(log, number, title, ok, detail, elapsed=None, limit=None):
    within = limit is None or elapsed < limit
    timing = ""
    if elapsed is not None:
        timing = f" [{elapsed:.2f}s" + (f" / limit {limit:g}s]" if limit else "]")
    status = "PASS" if ok and within else "FAIL"
    line = f"criterion {number}: {status} {title}: {detail}{timing}"
    log.append(line)
    print(line)
    assert ok, line
    assert within, f"{line} (over time limit)"


# 1 -----------------------------------------------------------------------------


def test_criterion_1_graph_algebra(acceptance_log):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    bad = []
    for trial in range(1000):
        n0 = int(rng.integers(1, 6))
        t = int(rng.integers(0, 9))
        g = random_graph(rng, 8, n0=n0, steps=t)
        infers = sum(1 for e in g.edges if e.kind == EdgeKind.INFERS)
        violations = validate(g)
        if len(g.nodes) != n0 + 2 * t or infers != t or violations:
            bad.append((trial, len(g.nodes), infers, violations[:2]))
    elapsed = time.perf_counter() - t0
    _record(acceptance_log, 1, "graph algebra over 1000 expansion sequences", not bad, f"{len(bad)} violating sequences", elapsed, 5.0)


# 2 -----------------------------------------------------------------------------


def test_criterion_2_infonce_analytics(acceptance_log):
    sym = infonce_loss(0.3, [0.3], 1.0)[0]
    # oracle: the closed form -log(e / (e + 2)) = log(1 + 2/e)
    closed = math.log(1.0 + 2.0 / math.e)
    skew = infonce_loss(1.0, [0.0, 0.0], 1.0)[0]
    empty = infonce_loss(0.7, [], 0.1)[0]
    ok = abs(sym - math.log(2)) <= 1e-12 and abs(skew - closed) <= 1e-12 and empty == 0.0
    detail = f"|sym - ln2| = {abs(sym - math.log(2)):.1e}, |skew - ln(1+2/e)| = {abs(skew - closed):.1e}, empty = {empty!r}"
    _record(acceptance_log, 2, "InfoNCE closed forms", ok, detail)


# 3 -----------------------------------------------------------------------------


def _fd_instance(rng):
    d, h = 6, 4
    cfg = GnnConfig(layers=2, hidden_dim=h, input_dim=d, out_dim=d, seed=int(rng.integers(1 << 31)))
    params = init_params(cfg)
    # nonzero biases so every parameter block is exercised
    for b in params.bias:
        b[:] = rng.normal(scale=0.3, size=h)
    n0 = int(rng.integers(1, 5))
    steps = int(rng.integers((5 - n0 + 1) // 2, (8 - n0) // 2 + 1))
    g = random_graph(rng, d, n0=n0, steps=steps)
    assert 5 <= len(g.nodes) <= 8
    lib = np.stack([unit(rng, d) for _ in range(4)])
    tau = float(rng.uniform(0.2, 1.0))

    def loss_of(p):
        state, _ = encode(g, p, cfg)
        s = lib @ state
        return infonce_loss(s[0], s[1:], tau)[0]

    state, tape = encode(g, params, cfg)
    s = lib @ state
    _, d_pos, d_negs = infonce_loss(s[0], s[1:], tau)
    d_state = d_pos * lib[0] + np.asarray(d_negs) @ lib[1:]
    analytic = backward(tape, d_state).flat()

    flat = params.flat()
    numeric = np.empty_like(flat)
    step = 1e-4
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += step
        down[i] -= step
        numeric[i] = (loss_of(params.with_flat(up)) - loss_of(params.with_flat(down))) / (2 * step)
    diff = analytic - numeric
    vector_rel = np.linalg.norm(diff) / max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    entry_rel = np.max(np.abs(diff) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12))
    return float(vector_rel), float(entry_rel)


def test_criterion_3_gradient_check(acceptance_log):
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    errors = [_fd_instance(rng) for _ in range(100)]
    elapsed = time.perf_counter() - t0
    worst = max(v for v, _ in errors)
    # entrywise ratios on near-zero components measure the difference
    # quotient's own O(step^2) truncation error, so they are reported only
    worst_entry = max(e for _, e in errors)
    _record(
        acceptance_log, 3, "end-to-end gradient vs central differences (100 instances)",
        worst < 1e-4, f"max relative error {worst:.2e} (worst single entry {worst_entry:.1e})", elapsed, 60.0,
    )


# 4 -----------------------------------------------------------------------------


def _brute_argmax(state, matrix):
    best, best_score = 0, None
    for i, row in enumerate(matrix):
        score = min(1.0, max(-1.0, math.fsum(float(a) * float(b) for a, b in zip(row, state))))
        if best_score is None or score > best_score:
            best, best_score = i, score
    return best


def test_criterion_4_retrieval_oracle(acceptance_log):
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    mismatches, ties = 0, 0
    for trial in range(10_000):
        dim = int(rng.integers(2, 9))
        n = int(rng.integers(1, 501)) if trial % 10 == 0 else int(rng.integers(1, 40))
        m = rng.normal(size=(n, dim))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        state = unit(rng, dim)
        if trial % 4 == 0 and n >= 2:
            # force a tie: copy the winning row to a random other slot
            top = int(np.argmax(m @ state))
            other = int(rng.integers(0, n))
            if other != top:
                m[other] = m[top]
                ties += 1
        lib = TheoremLibrary.from_matrix([f"T{i}" for i in range(n)], [f"s{i}" for i in range(n)], m)
        got = lib.index(select(state, lib).selected)
        if got != _brute_argmax(state, m):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    _record(
        acceptance_log, 4, "select vs brute-force argmax on 10000 instances",
        mismatches == 0, f"{mismatches} mismatches ({ties} forced ties)", elapsed, 10.0,
    )


# 5 -----------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_5_training_convergence(acceptance_log):
    t0 = time.perf_counter()
    samples, lib = generate_synthetic(10, 30, seed=7)
    steps = build_step_samples(samples, lib, LocalEmbedder(lib.dim))
    # dataset seed 7; trainer and encoder keep their default seeds
    _, history = train(steps, lib, TrainConfig(epochs=30), GnnConfig(input_dim=lib.dim, out_dim=lib.dim))
    elapsed = time.perf_counter() - t0
    best = max(r.retrieval_top1 for r in history)
    first = [r.mean_loss for r in history[:5]]
    monotone = all(b <= a for a, b in zip(first, first[1:]))
    detail = f"best top-1 {best:.3f}, first-5 losses {', '.join(f'{x:.4f}' for x in first)}"
    _record(acceptance_log, 5, "training convergence on synthetic data", best >= 0.95 and monotone, detail, elapsed, 300.0)


# 6 -----------------------------------------------------------------------------

ABLATION_SEEDS = (1, 2, 7)
ABLATION_SYNTHETIC = SyntheticConfig(switch_prob=0.3)
ABLATION_EPOCHS = 15


def ablation_accuracies(seed):
    """Train on 80% of the chains, evaluate both encoders on the held-out 20%."""
    samples, lib = generate_synthetic(10, 30, seed, ABLATION_SYNTHETIC)
    embedder = LocalEmbedder(lib.dim)
    train_set, test_set = split(samples, SplitSpec(0.8, seed))
    gnn_cfg = GnnConfig(input_dim=lib.dim, out_dim=lib.dim, seed=seed)
    params, _ = train(build_step_samples(train_set, lib, embedder), lib, TrainConfig(epochs=ABLATION_EPOCHS, seed=seed), gnn_cfg)
    engine_cfg = EngineConfig()
    llm = LlmBackendConfig(kind="scripted", table=gold_path_script(test_set, lib, embedder, engine_cfg))
    report = evaluate(
        [to_eval_sample(s) for s in test_set], lib, embedder, llm, engine_cfg,
        params=params, gnn_cfg=gnn_cfg, encoders=("gnn", "average"), repeats=3,
    )
    return {r.config: r.accuracy for r in report.rows}


@pytest.mark.slow
def test_criterion_6_ablation_direction(acceptance_log):
    t0 = time.perf_counter()
    results = {seed: ablation_accuracies(seed) for seed in ABLATION_SEEDS}
    elapsed = time.perf_counter() - t0
    never_worse = all(r["gnn"] >= r["average"] for r in results.values())
    strictly = any(r["gnn"] > r["average"] for r in results.values())
    detail = "; ".join(f"seed {s}: gnn {r['gnn']:.3f} vs average {r['average']:.3f}" for s, r in results.items())
    _record(acceptance_log, 6, "GNN encoder vs average-embedding encoder", never_worse and strictly, detail, elapsed, 600.0)


# 7 -----------------------------------------------------------------------------


def three_step_run(encoder="gnn"):
    embedder = fixture_embedder()
    lib = text_library(FIXTURE_THEOREMS, embedder)
    cfg = GnnConfig(hidden_dim=8, input_dim=FIXTURE_DIM, out_dim=FIXTURE_DIM, seed=5)
    return run(
        FIXTURE_QUESTION, FIXTURE_PREMISES, lib, init_params(cfg), cfg,
        EngineConfig(encoder=encoder), ScriptedBackend(FIXTURE_SCRIPT), embedder,
    )


def test_criterion_7_closed_loop_determinism(acceptance_log):
    outputs = [three_step_run().to_json() for _ in range(5)]
    res = three_step_run()
    n0 = len(FIXTURE_PREMISES) + 1
    identical = len(set(outputs)) == 1
    ok = identical and res.final_answer == "42" and len(res.trace) == 3 and len(res.final_graph.nodes) == n0 + 6
    detail = (
        f"identical={identical}, answer={res.final_answer!r}, steps={len(res.trace)}, "
        f"nodes={len(res.final_graph.nodes)} (n0={n0})"
    )
    _record(acceptance_log, 7, "closed-loop determinism and 3-step fixture", ok, detail)


# 8 -----------------------------------------------------------------------------


def test_criterion_8_permutation_invariance(acceptance_log):
    rng = np.random.default_rng(808)
    cfg = GnnConfig(layers=2, hidden_dim=16, input_dim=12, out_dim=12, seed=3)
    params = init_params(cfg)
    graphs = [random_graph(rng, 12, n0=3, steps=3), random_graph(rng, 12, n0=2, steps=5)]
    worst = 0.0
    for g in graphs:
        base, _ = encode(g, params, cfg)
        for _ in range(50):
            perm = rng.permutation(len(g.nodes))
            out, _ = encode(relabel(g, perm), params, cfg)
            worst = max(worst, float(np.max(np.abs(out - base))))
    _record(acceptance_log, 8, "encode invariant under 100 relabelings", worst <= 1e-12, f"max deviation {worst:.1e}")


# 9 -----------------------------------------------------------------------------

_GOOD_STEP = {"description": "apply", "theorem_id": "T0", "used_ids": [0], "result": "r"}
_GOOD = {"question": "q?", "premises": ["p0", "p1"], "target_conclusion": "7", "steps": [_GOOD_STEP]}


def _without(d, key):
    return {k: v for k, v in d.items() if k != key}


# (raw line, expected error type, expected field or None)
MALFORMED = [
    ("{not json", ParseError, None),
    (json.dumps(_without(_GOOD, "question")), SchemaViolation, "question"),
    (json.dumps({**_GOOD, "premises": []}), SchemaViolation, "premises"),
    (json.dumps({**_GOOD, "premises": ["ok", ""]}), SchemaViolation, "premises[1]"),
    (json.dumps({**_GOOD, "steps": []}), SchemaViolation, "steps"),
    (json.dumps({**_GOOD, "steps": [_without(_GOOD_STEP, "theorem_id")]}), SchemaViolation, "steps[0].theorem_id"),
    (json.dumps({**_GOOD, "steps": [{**_GOOD_STEP, "used_ids": [5]}]}), SchemaViolation, "steps[0].used_ids"),
    (json.dumps({**_GOOD, "steps": [_GOOD_STEP, {**_GOOD_STEP, "used_ids": ["x"]}]}), SchemaViolation, "steps[1].used_ids"),
    (json.dumps({**_GOOD, "extra": 1}), SchemaViolation, "extra"),
    (json.dumps({**_GOOD, "target_conclusion": 7}), SchemaViolation, "target_conclusion"),
]


def test_criterion_9_data_pipeline(acceptance_log, tmp_path):
    rng = np.random.default_rng(909)
    law_failures = 0
    for _ in range(1000):
        n = int(rng.integers(2, 300))
        data = [f"item{i}" for i in range(n)]
        spec = SplitSpec(float(rng.uniform(0.05, 0.95)), int(rng.integers(1 << 31)))
        a_train, a_test = split(data, spec)
        b_train, b_test = split(data, spec)
        expected = min(max(math.floor(n * spec.train_fraction + 1e-9), 1), n - 1)
        if (
            (a_train, a_test) != (b_train, b_test)
            or sorted(a_train + a_test) != sorted(data)
            or set(a_train) & set(a_test)
            or len(a_train) != expected
        ):
            law_failures += 1

    wrong = []
    for raw, exc_type, field in MALFORMED:
        line_no = 3
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(_GOOD) + "\n" + json.dumps(_GOOD) + "\n" + raw + "\n", encoding="utf-8")
        try:
            load_training(path)
            wrong.append((raw[:30], "accepted"))
        except (ParseError, SchemaViolation) as exc:
            if not isinstance(exc, exc_type) or exc.line != line_no or (field is not None and exc.field != field):
                wrong.append((raw[:30], repr(exc)))
    ok = law_failures == 0 and not wrong
    detail = f"{law_failures} split-law failures over 1000 datasets; {len(MALFORMED) - len(wrong)}/{len(MALFORMED)} malformed records rejected correctly"
    _record(acceptance_log, 9, "split laws and loader rejection", ok, detail)
