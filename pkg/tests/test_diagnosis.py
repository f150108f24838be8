from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from scaffold_evolve.backends import ChatRequest
from scaffold_evolve.diagnosis import (
    Classification,
    DiagnosisReport,
    Priority,
    Weakness,
    build_diagnosis_prompt,
    diagnose,
    extract_score,
    parse_classification,
    parse_diagnosis,
    rank_siblings,
    render_diagnosis,
    top_k,
)
from scaffold_evolve.errors import DiagnosisDisabled, ScoreMissing, ScoreOutOfRange
from scaffold_evolve.prompts import load_pack
from scaffold_evolve.summarizer import SummaryStep, TrajectorySummary

from conftest import rules
from golden_diagnosis import GOLDEN, report

SUMMARY = TrajectorySummary((SummaryStep(1, "looked", "saw"),))


@pytest.mark.parametrize("label, text, expected", GOLDEN, ids=[g[0] for g in GOLDEN])
def test_golden_scores(label, text, expected):
    if isinstance(expected, int):
        assert extract_score(text) == expected
        assert parse_diagnosis(text).score == expected
    else:
        with pytest.raises({"ScoreMissing": ScoreMissing, "ScoreOutOfRange": ScoreOutOfRange}[expected]):
            extract_score(text)
        parsed = parse_diagnosis(text)
        assert parsed.score is None and parsed.score_error.startswith(expected)


def test_weaknesses_in_order():
    text = report("SCORE: 50", [("P0", "X", "Knowledge Gap"), ("P1", "Y", "Reasoning Flaw")])
    r = parse_diagnosis(text)
    assert [(w.title, w.priority) for w in r.weaknesses] == [("X", Priority.P0), ("Y", Priority.P1)]
    assert r.weaknesses[1].classification is Classification.REASONING_FLAW
    assert r.weaknesses[0].root_cause_inference and r.weaknesses[0].steps_wasted == "6"
    assert r.truths == ["Port 80 is open."] and r.highlights == ["Found login form."]


def test_no_sections_is_empty_report():
    r = parse_diagnosis("nothing structured")
    assert r.truths == [] and r.weaknesses == [] and r.score is None
    assert r.score_error.startswith("ScoreMissing")


@pytest.mark.parametrize(
    "text, cls",
    [("[Knowledge Gap]", Classification.KNOWLEDGE_GAP), ("tool misuse", Classification.TOOL_MISUSE),
     ("Prerequisite-Violation | Reasoning Flaw", Classification.PREREQUISITE_VIOLATION), ("other", None)],
)
def test_classification_lookup(text, cls):
    assert parse_classification(text) is cls


@given(st.text(max_size=400))
def test_parse_never_raises(text):
    r = parse_diagnosis(text)
    assert r.score is None or 0 <= r.score <= 100


weakness = st.builds(
    Weakness,
    title=st.text(alphabet="abc XYZ", min_size=1, max_size=12).map(str.strip).filter(bool),
    priority=st.sampled_from(list(Priority)),
    classification=st.one_of(st.none(), st.sampled_from(list(Classification))),
    root_cause_inference=st.booleans(),
)
line = st.text(alphabet="abc xyz.,", min_size=1, max_size=20).map(str.strip).filter(bool)


@given(st.lists(line, max_size=4), st.lists(weakness, max_size=4), st.integers(0, 100))
def test_render_round_trip(truths, weaknesses, score):
    original = DiagnosisReport(truths=truths, highlights=["h"], weaknesses=weaknesses, assessment="done", score=score)
    parsed = parse_diagnosis(render_diagnosis(original))
    assert parsed.truths == truths
    assert parsed.score == score
    assert [w.priority for w in parsed.weaknesses] == [w.priority for w in weaknesses]
    assert [w.classification for w in parsed.weaknesses] == [w.classification for w in weaknesses]
    assert [w.root_cause_inference for w in parsed.weaknesses] == [w.root_cause_inference for w in weaknesses]


def test_prompt_shape(toy):
    messages = build_diagnosis_prompt(SUMMARY, toy, load_pack("default"))
    assert [m["role"] for m in messages] == ["system", "user"]
    assert build_diagnosis_prompt(TrajectorySummary(()), toy, load_pack("default"))[1]["content"]


def test_prompt_disabled_under_ablation(toy):
    with pytest.raises(DiagnosisDisabled):
        build_diagnosis_prompt(SUMMARY, toy, load_pack("ablation-no-diagnosis"))


def test_diagnose_scores_and_degrades(toy):
    pack = load_pack("default")
    assert diagnose(SUMMARY, toy, pack, rules({"response": "SCORE: 85"})).score == 85
    missing = diagnose(SUMMARY, toy, pack, rules({"response": "no score"}))
    assert missing.effective_score == 0 and missing.raw == "no score"
    failed = diagnose(SUMMARY, toy, pack, rules({"fail": True}))
    assert failed.score == 0 and "BackendFailure" in failed.score_error


def test_rank_examples():
    assert rank_siblings([("a", 55), ("b", 40), ("c", 25)]) == ["a", "b", "c"]
    assert rank_siblings([("a", 50), ("b", 50)]) == ["a", "b"]
    assert rank_siblings([("a", 7)]) == ["a"]
    assert top_k([("a", 1), ("b", 9), ("c", 5)], 2) == ["b", "c"]


scores = st.lists(st.integers(0, 100), min_size=1, max_size=12)


@given(scores)
def test_rank_is_stable_descending_permutation(values):
    nodes = [(f"n{i}", s) for i, s in enumerate(values)]
    ranked = rank_siblings(nodes)
    assert sorted(ranked) == sorted(n for n, _ in nodes)
    by_id = dict(nodes)
    ordered = [by_id[n] for n in ranked]
    assert ordered == sorted(ordered, reverse=True)
    for a, b in zip(ranked, ranked[1:]):
        if by_id[a] == by_id[b]:
            assert int(a[1:]) < int(b[1:])


@given(scores, st.sampled_from([lambda s: s * 3 + 1, lambda s: s ** 2, lambda s: 2 ** (s / 10), lambda s: s - 1000]))
def test_rank_invariant_under_monotone_transform(values, f):
    nodes = [(f"n{i}", s) for i, s in enumerate(values)]
    transformed = [(n, f(s)) for n, s in nodes]
    assert rank_siblings(nodes) == rank_siblings(transformed)
