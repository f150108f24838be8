from __future__ import annotations

import json

import pytest
from hypothesis import given, settings, strategies as st

from scaffold_evolve import BeamConfig, Status, evolve
from scaffold_evolve.backends import ScriptedBackend
from scaffold_evolve.engine import EvolutionNode, NodeStatus, select_parents
from scaffold_evolve.errors import ConfigError, FatalSetupError
from scaffold_evolve.executor import LocalExecutor
from scaffold_evolve.persist import TREE_FILE, load_run
from scaffold_evolve.prompts import load_pack
from scaffold_evolve.scaffold import load_seed

from conftest import SCRIPTS, act, rules

LS = {"role": "episode", "repeat": True, "response": act("ls")}
SUMMARY = {"role": "summarizer", "repeat": True, "response": "=== STEP 1 ===\nTHOUGHT: t\nOBSERVATION: o\n"}
LOW = {"role": "diagnosis", "repeat": True, "response": "### 3. Final Assessment\nSCORE: 5"}
NOOP = {"role": "refiner", "repeat": True, "response": "No change."}
BREAK = {
    "role": "refiner",
    "repeat": True,
    "meta": {"phase": 4},
    "response": '<replace_code path="agent.py"><search>    return stdout or stderr</search>'
    "<replace>    return (</replace></replace_code>",
}
SHORT = BeamConfig(step_budget=2)


def run(seed, toy, backend, config=SHORT, pack="default", run_dir=None):
    return evolve(seed, toy, config, backend, LocalExecutor(), load_pack(pack), run_dir=run_dir)


def test_unsolved_run_spends_sixteen_rollouts(seed, toy):
    backend = rules(
        {"role": "diagnosis", "node": "0.1", "repeat": True, "response": "SCORE: 80"}, LS, SUMMARY, LOW, NOOP
    )
    result = run(seed, toy, backend)
    tree = result.tree
    assert result.status is Status.UNSOLVED
    assert [len(p) for p in tree.populations] == [1, 3, 6, 6]
    assert tree.populations[2] == ["0.1.0", "0.1.1", "0.1.2", "0.0.0", "0.0.1", "0.0.2"]
    acc = tree.to_index()["accounting"]
    assert acc["rollouts"] == 16
    # summarize/diagnose gens 0-2 (1 + 3 + 6 nodes); refiner 4 calls per child of 1*3 + 2*3 + 2*3 children
    assert acc["llm_calls_by_role"]["diagnosis"] == 10
    assert acc["llm_calls_by_role"]["refiner"] == 4 * 15
    assert acc["llm_calls_by_role"]["episode"] == 16 * 2
    assert acc["nodes_by_status"]["Executed"] == 16


def test_seed_solves_at_generation_zero(seed, toy):
    backend = rules({"role": "episode", "response": act("submit flag{toy_scaffold_evolved}")})
    result = run(seed, toy, backend)
    assert result.status is Status.SOLVED
    assert list(result.tree.nodes) == ["0"]
    assert result.tree.calls["refiner"] == 0


def test_toy_script_solves_in_four_rollouts(seed, toy, tmp_path):
    result = run(seed, toy, ScriptedBackend.from_file(SCRIPTS / "toy_solve.yaml"), BeamConfig(), run_dir=tmp_path)
    assert result.status is Status.SOLVED
    assert result.tree.to_index()["accounting"]["rollouts"] == 4
    solved = [n for n in result.tree.nodes.values() if n.status is NodeStatus.SOLVED]
    assert [n.id for n in solved] == ["0.2"]
    assert "hidden_files" in solved[0].trajectory.loaded_skills


def test_all_children_invalid(seed, toy):
    backend = rules(LS, SUMMARY, LOW, BREAK, NOOP)
    result = run(seed, toy, backend, BeamConfig(step_budget=2, on_phase_failure="discard"))
    assert result.status is Status.UNSOLVED
    statuses = {n.id: n.status for n in result.tree.nodes.values()}
    assert statuses == {"0": NodeStatus.EXECUTED, **{f"0.{j}": NodeStatus.INVALID for j in range(3)}}
    assert result.tree.to_index()["accounting"]["rollouts"] == 1


def test_select_top_one_call_arithmetic(seed, toy):
    cfg = BeamConfig(step_budget=1, select_top=1, generations=2)
    result = run(seed, toy, rules(LS, SUMMARY, LOW, NOOP), cfg)
    assert [len(p) for p in result.tree.populations] == [1, 3, 3]
    assert result.tree.calls["refiner"] == 4 * 6
    assert result.tree.calls["diagnosis"] == 4


def test_no_diagnosis_pack_makes_no_diagnosis_calls(seed, toy):
    result = run(seed, toy, rules(LS, SUMMARY, NOOP), BeamConfig(step_budget=1, generations=1), "ablation-no-diagnosis")
    assert result.tree.calls["diagnosis"] == 0
    assert result.tree.nodes["0"].score == 0


def test_broken_seed_is_fatal(seed, toy):
    files = dict(seed.files)
    files["agent.py"] = b"def format_output(:\n"
    broken = type(seed)(files, seed.layer_map, seed.skills)
    with pytest.raises(FatalSetupError):
        run(broken, toy, rules(LS))


def test_persisted_run_is_deterministic_and_reloadable(seed, toy, tmp_path):
    script = SCRIPTS / "toy_solve.yaml"
    a = run(seed, toy, ScriptedBackend.from_file(script), BeamConfig(), run_dir=tmp_path / "a")
    b = run(seed, toy, ScriptedBackend.from_file(script), BeamConfig(), run_dir=tmp_path / "b")
    assert (tmp_path / "a" / TREE_FILE).read_bytes() == (tmp_path / "b" / TREE_FILE).read_bytes()
    record = load_run(tmp_path / "a")
    assert [n["id"] for n in record.nodes] == [n.id for n in sorted(a.tree.nodes.values(), key=lambda n: n.seq)]
    assert record.diffs["0.2"] == a.tree.nodes["0.2"].diff.text
    meta = json.loads((tmp_path / "a" / "nodes" / "0.2" / "meta.json").read_text())
    assert meta["status"] == "Solved" and meta["llm_calls"]["refiner"] == 4
    assert (tmp_path / "a" / "nodes" / "0.2" / "scaffold" / "skills" / "hidden_files" / "SKILL.md").is_file()
    assert b.status is Status.SOLVED


# -- selection -------------------------------------------------------------------------


def node(node_id, seq, score, status=NodeStatus.EXECUTED):
    return EvolutionNode(node_id, "0", 1, seq, load_seed(), status=status, score=score)


@pytest.mark.parametrize(
    "scores, expected",
    [
        ([10, 80, 40], ["0.1", "0.2"]),
        ([50, 50, 50], ["0.0", "0.1"]),
        ([None, 5, 0], ["0.1", "0.0"]),
        ([95], ["0.0"]),
    ],
)
def test_select_parents(scores, expected):
    pop = [node(f"0.{i}", i, s) for i, s in enumerate(scores)]
    assert [n.id for n in select_parents(pop, BeamConfig())] == expected


def test_select_skips_invalid():
    pop = [node("0.0", 0, 99, NodeStatus.INVALID), node("0.1", 1, 1), node("0.2", 2, 2)]
    assert [n.id for n in select_parents(pop, BeamConfig(select_top=1))] == ["0.2"]


@given(st.lists(st.integers(0, 100), min_size=1, max_size=8), st.integers(1, 3))
def test_selection_invariant_under_monotone_transform(scores, top):
    cfg = BeamConfig(beam_width=3, select_top=top)
    plain = [node(f"0.{i}", i, s) for i, s in enumerate(scores)]
    scaled = [node(f"0.{i}", i, 3 * s + 7) for i, s in enumerate(scores)]
    assert [n.id for n in select_parents(plain, cfg)] == [n.id for n in select_parents(scaled, cfg)]
    assert len(select_parents(plain, cfg)) == min(len(scores), top)


@pytest.mark.parametrize(
    "kwargs",
    [{"generations": -1}, {"select_top": 4}, {"beam_width": 0}, {"theta": 1.5}, {"on_phase_failure": "x"}, {"step_budget": 0}],
)
def test_beam_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        BeamConfig(**kwargs)


def expected_rollouts(cfg: BeamConfig) -> tuple[int, list[int]]:
    sizes = [1]
    for _ in range(cfg.generations):
        sizes.append(min(sizes[-1], cfg.select_top, cfg.beam_width) * cfg.children_per_parent)
    return min(sum(sizes), cfg.rollout_budget_cap), sizes


@settings(max_examples=12, deadline=None)
@given(
    st.integers(0, 2), st.integers(1, 2), st.integers(1, 2), st.integers(1, 6),
)
def test_rollouts_never_exceed_cap(generations, children, top, cap):
    cfg = BeamConfig(
        generations=generations, children_per_parent=children, select_top=top, beam_width=2,
        rollout_budget_cap=cap, step_budget=1,
    )
    result = run(load_seed(), _toy(), rules(LS, SUMMARY, LOW, NOOP), cfg)
    acc = result.tree.to_index()["accounting"]
    want, sizes = expected_rollouts(cfg)
    assert acc["rollouts"] == want <= cap
    assert acc["nodes_by_status"]["Executed"] + acc["nodes_by_status"]["Pruned"] == sum(
        len(p) for p in result.tree.populations
    )


def _toy():
    from conftest import TOY
    from scaffold_evolve.challenge import load_challenge

    return load_challenge(TOY)
