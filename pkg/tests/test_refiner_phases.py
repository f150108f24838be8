from __future__ import annotations

from scaffold_evolve.backends import CountingBackend
from scaffold_evolve.prompts import load_pack
from scaffold_evolve.refiner import MutationContext, mutate
from scaffold_evolve.refiner.phases import build_phase_messages, child_diff, dry_run, patch_sections
from scaffold_evolve.scaffold import LayerId, apply_diff, diff_files, scaffold_from_files

from conftest import rules

NOOP = {"role": "refiner", "repeat": True, "response": "Nothing to change."}
CTX = MutationContext(summary="=== STEP 1 ===\nTHOUGHT: t\nOBSERVATION: o\n", diagnosis="SCORE: 40", node_id="0")
SKILL = (
    '<create_file path="skills/recon/SKILL.md"><content>Enumerate hidden files.</content></create_file>\n'
    '<create_file path="skills/recon/description.md"><content>Recon playbook</content></create_file>'
)
BREAK_DRIVER = (
    '<replace_code path="agent.py"><search>    return stdout or stderr</search>'
    "<replace>    return (stdout or stderr</replace></replace_code>"
)


def test_noop_children_equal_parent(seed):
    backend = CountingBackend(rules(NOOP))
    children = mutate(seed, CTX, backend, load_pack("default"), ["0.0", "0.1", "0.2"])
    assert [c.child_id for c in children] == ["0.0", "0.1", "0.2"]
    assert all(c.valid and c.files == seed.files for c in children)
    assert backend.snapshot()["refiner"] == 12


def test_phase_three_creates_skill(seed):
    backend = rules({"role": "refiner", "meta": {"phase": 3}, "response": SKILL}, NOOP)
    (child,) = mutate(seed, CTX, backend, load_pack("default"), ["0.0"])
    assert child.valid
    diff = child_diff(seed, child)
    assert diff.paths == ["skills/recon/SKILL.md", "skills/recon/description.md"]
    assert set(diff.by_layer()) == {LayerId.DOMAIN_KNOWLEDGE}
    assert [p.report.results[0].outcome.value if p.report.results else None for p in child.phases] == [
        None, None, "Applied", None,
    ]


def test_phase_four_syntax_break_is_reverted(seed):
    backend = rules({"role": "refiner", "meta": {"phase": 4}, "response": BREAK_DRIVER}, NOOP)
    (child,) = mutate(seed, CTX, backend, load_pack("default"), ["0.0"])
    assert child.valid and child.files == seed.files
    last = child.phases[-1]
    assert last.reverted and last.errors[0].path == "agent.py"


def test_out_of_phase_edit_is_unsafe(seed):
    # A skill created during the Strategy phase is refused; the phase is not reverted.
    backend = rules({"role": "refiner", "meta": {"phase": 1}, "response": SKILL}, NOOP)
    (child,) = mutate(seed, CTX, backend, load_pack("default"), ["0.0"])
    first = child.phases[0]
    assert {r.outcome.value for r in first.report.results} == {"SkippedUnsafe"}
    assert not first.reverted and child.files == seed.files


def test_discard_marks_one_of_three_invalid(seed):
    backend = rules({"role": "refiner", "node": "0.1", "meta": {"phase": 4}, "response": BREAK_DRIVER}, NOOP)
    children = mutate(
        seed, CTX, backend, load_pack("default"), ["0.0", "0.1", "0.2"], on_phase_failure="discard"
    )
    assert [c.valid for c in children] == [True, False, True]


def test_holistic_single_call(seed):
    backend = CountingBackend(rules({"role": "refiner", "meta": {"phase": "holistic"}, "response": SKILL}))
    (child,) = mutate(seed, CTX, backend, load_pack("ablation-holistic"), ["0.0"], holistic=True)
    assert backend.snapshot()["refiner"] == 1
    assert child.valid and "skills/recon/SKILL.md" in child.files


def test_fan_out_matches_sequential(seed):
    make = lambda: rules({"role": "refiner", "node": "0.1", "meta": {"phase": 3}, "response": SKILL}, NOOP)
    seq = mutate(seed, CTX, make(), load_pack("default"), ["0.0", "0.1", "0.2"])
    par = mutate(seed, CTX, make(), load_pack("default"), ["0.0", "0.1", "0.2"], fan_out=3)
    assert [c.files for c in seq] == [c.files for c in par]


def test_messages_carry_context(seed):
    msgs = build_phase_messages(load_pack("default"), seed, CTX, LayerId.PERCEPTION)
    assert [m["role"] for m in msgs] == ["system", "user"]
    assert "SCORE: 40" in msgs[1]["content"] and "def format_output" in msgs[1]["content"]


def test_patch_sections_groups_paths(seed):
    files = dict(seed.files)
    files["skills/a/SKILL.md"] = b"x\n"
    files["system_template.txt"] = files["system_template.txt"] + b"more\n"
    sections = patch_sections(diff_files(seed.files, files))
    assert set(sections["skills"]) == {"skills/a/SKILL.md"}
    assert set(sections["prompts"]) == {"system_template.txt"}
    assert sections["agent.py"] == ""


def test_dry_run_rejects_non_text_driver(seed):
    files = dict(seed.files)
    files["agent.py"] = files["agent.py"].replace(b"    if stderr and stdout:", b"    return 3\n    if stderr and stdout:")
    assert dry_run(files)[0].path == "agent.py"


def test_diff_replay_reproduces_child(seed):
    backend = rules({"role": "refiner", "meta": {"phase": 3}, "response": SKILL}, NOOP)
    (child,) = mutate(seed, CTX, backend, load_pack("default"), ["0.0"])
    diff = child_diff(seed, child)
    assert apply_diff(seed.files, diff) == child.files
    assert scaffold_from_files(apply_diff(seed.files, diff)).skill("recon") is not None
