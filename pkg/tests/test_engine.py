import json
from dataclasses import replace

import numpy as np
import pytest

from helpers import (
    FIXTURE_DIM,
    FIXTURE_PREMISES,
    FIXTURE_QUESTION,
    FIXTURE_SCRIPT,
    FIXTURE_THEOREMS,
    fixture_embedder,
    text_library,
)
from theoremgraph.engine import EngineConfig, RunResult, TraceStep, load_trace, replay, run, write_trace
from theoremgraph.errors import ScriptExhausted, TraceCorrupt
from theoremgraph.gnn import GnnConfig, init_params
from theoremgraph.graph import NodeKind, validate
from theoremgraph.llm import LlmBackendConfig, ScriptedBackend
from theoremgraph.matcher import select

EMB = fixture_embedder()
LIB = text_library(FIXTURE_THEOREMS, EMB)
GCFG = GnnConfig(hidden_dim=8, input_dim=FIXTURE_DIM, out_dim=FIXTURE_DIM, seed=5)
PARAMS = init_params(GCFG)
N0 = len(FIXTURE_PREMISES) + 1


def go(script=FIXTURE_SCRIPT, cfg=EngineConfig(), params=PARAMS, gcfg=GCFG):
    return run(FIXTURE_QUESTION, FIXTURE_PREMISES, LIB, params, gcfg, cfg, ScriptedBackend(script), EMB)


def test_three_step_fixture():
    res = go()
    assert res.termination == "answered" and res.final_answer == "42"
    assert len(res.trace) == 3 and [s.step for s in res.trace] == [0, 1, 2]
    g = res.final_graph
    assert len(g.nodes) == N0 + 6 and g.step == 3
    assert validate(g) == []
    assert g.nodes[N0 - 1].text == FIXTURE_QUESTION and g.nodes[N0 - 1].kind == NodeKind.CONDITION


def test_runs_are_byte_identical():
    assert len({go().to_json() for _ in range(5)}) == 1


def test_step_budget():
    res = go(script=["not final"], cfg=EngineConfig(max_inference_steps=1))
    assert res.termination == "max_steps" and res.final_answer is None and len(res.trace) == 1


def test_unreachable_score_floor():
    res = go(cfg=EngineConfig(min_theorem_score=1.1))
    assert res.termination == "below_score_floor" and res.trace == []
    assert len(res.final_graph.nodes) == N0


def test_average_encoder_reads_no_parameters():
    res = go(cfg=EngineConfig(encoder="average"), params=None, gcfg=None)
    assert res.final_answer == "42"
    with pytest.raises(ValueError):
        go(params=None, gcfg=None)


def test_trace_selection_matches_recorded_ranking():
    res = go()
    for st in res.trace:
        best = max(st.ranking, key=lambda r: r[1])
        assert st.selected[0] == best[0] and st.selected == st.ranking[0]
        assert len(st.ranking) <= 5


def test_selection_uses_current_state():
    from theoremgraph.gnn import encode

    res = go()
    g0 = replay([], LIB, FIXTURE_QUESTION, FIXTURE_PREMISES, EMB)
    assert res.trace[0].selected[0] == select(encode(g0, PARAMS, GCFG)[0], LIB).selected


def test_errors_carry_partial_trace():
    with pytest.raises(ScriptExhausted) as info:
        go(script=["first", "second"])
    assert len(info.value.partial_trace) == 2
    assert len(info.value.partial_graph.nodes) == N0 + 4


def test_input_checks():
    with pytest.raises(ValueError):
        run("q", [], LIB, PARAMS, GCFG, EngineConfig(), ScriptedBackend(["x"]), EMB)
    with pytest.raises(ValueError):
        EngineConfig(max_inference_steps=0)
    with pytest.raises(ValueError):
        EngineConfig(encoder="attention")


def test_config_backend_is_built_per_run():
    cfg = LlmBackendConfig(script=FIXTURE_SCRIPT)
    a = run(FIXTURE_QUESTION, FIXTURE_PREMISES, LIB, PARAMS, GCFG, EngineConfig(), cfg, EMB)
    b = run(FIXTURE_QUESTION, FIXTURE_PREMISES, LIB, PARAMS, GCFG, EngineConfig(), cfg, EMB)
    assert a.to_json() == b.to_json()


def test_replay_roundtrip_and_empty_trace():
    res = go()
    assert replay(res.trace, LIB, FIXTURE_QUESTION, FIXTURE_PREMISES, EMB, reference=res.final_graph).same_as(res.final_graph)
    g0 = replay([], LIB, FIXTURE_QUESTION, FIXTURE_PREMISES, EMB)
    assert len(g0.nodes) == N0 and g0.step == 0


def test_replay_detects_corruption():
    trace = go().trace
    gap = [trace[0], replace(trace[2], step=2)]
    with pytest.raises(TraceCorrupt):
        replay(gap, LIB, FIXTURE_QUESTION, FIXTURE_PREMISES, EMB)
    unknown = [replace(trace[0], selected=("T404", 0.5), ranking=(("T404", 0.5),))]
    with pytest.raises(TraceCorrupt):
        replay(unknown, LIB, FIXTURE_QUESTION, FIXTURE_PREMISES, EMB)
    bad_premise = [replace(trace[0], premise_ids=(99,))]
    with pytest.raises(TraceCorrupt):
        replay(bad_premise, LIB, FIXTURE_QUESTION, FIXTURE_PREMISES, EMB)
    other = go(script=["different"], cfg=EngineConfig(max_inference_steps=1))
    with pytest.raises(TraceCorrupt):
        replay(trace[:1], LIB, FIXTURE_QUESTION, FIXTURE_PREMISES, EMB, reference=other.final_graph)


def test_trace_file_roundtrip(tmp_path):
    res = go()
    path = tmp_path / "trace.json"
    write_trace(res, path, {"seed": 5})
    doc = json.loads(path.read_text())
    assert doc["config"] == {"seed": 5} and doc["termination"] == "answered" and len(doc["steps"]) == 3
    back = load_trace(path)
    assert back.final_answer == "42" and back.final_graph.same_as(res.final_graph)
    assert [s.to_dict() for s in back.trace] == [s.to_dict() for s in res.trace]
    assert RunResult.from_dict(res.to_dict()).to_json() == res.to_json()
    assert TraceStep.from_dict(res.trace[0].to_dict()) == res.trace[0]
