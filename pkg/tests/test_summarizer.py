from __future__ import annotations

import re

import pytest
from hypothesis import given, settings, strategies as st

from scaffold_evolve.backends import ScriptedBackend
from scaffold_evolve.errors import BackendFailure, EmptyTrajectory, MalformedLog
from scaffold_evolve.prompts import load_pack
from scaffold_evolve.summarizer import (
    BACKFILL_LABEL,
    PLACEHOLDER,
    PREVIEW_CAP,
    RawStep,
    SummaryStep,
    backfill_placeholders,
    make_chunks,
    parse_chunk_output,
    parse_steps,
    preview,
    summarize_trajectory,
)
from scaffold_evolve.trajectory import StepRecord, render_block, render_log


def log_of(n: int, obs=lambda i: f"raw observation {i}") -> str:
    return render_log([StepRecord(i, f"thought {i}", f"cmd{i}", obs(i), 0) for i in range(1, n + 1)])


def test_parse_three_steps():
    steps = parse_steps(log_of(3))
    assert [s.index for s in steps] == [1, 2, 3]
    assert steps[1] == RawStep(2, "thought 2", "cmd2", "raw observation 2", "0")


def test_missing_observation_is_empty():
    assert parse_steps("=== STEP 1 ===\nTHOUGHT:\nx\n")[0].observation == ""


def test_empty_log():
    with pytest.raises(MalformedLog):
        parse_steps("")


@pytest.mark.parametrize(
    "total, expected",
    [(25, [(1, 10), (11, 20), (21, 25)]), (10, [(1, 10)]), (1, [(1, 1)])],
)
def test_chunks(total, expected):
    assert [(c.start, c.end) for c in make_chunks(total, 10)] == expected


def test_no_chunks_for_zero():
    with pytest.raises(EmptyTrajectory):
        make_chunks(0)


@given(st.integers(1, 300), st.integers(1, 40))
def test_chunks_partition(total, window):
    chunks = make_chunks(total, window)
    covered = [i for c in chunks for i in range(c.start, c.end + 1)]
    assert covered == list(range(1, total + 1))
    assert all(c.end - c.start + 1 <= window for c in chunks)


def test_preview_is_capped_and_windowed():
    steps = parse_steps(log_of(30, obs=lambda i: "y" * 50))
    text = preview(steps, 21, 10)
    assert text.startswith("Step 11:") and "Step 20:" in text and "Step 10:" not in text
    assert preview(steps, 1, 10) == ""
    long = [RawStep(i, "t" * 900, None, "o") for i in range(1, 11)]
    assert len(preview(long, 11).encode()) <= PREVIEW_CAP


def test_chunk_output_filters_range_and_fills_gaps():
    text = "".join(render_block(i, [("THOUGHT", f"t{i}"), ("OBSERVATION", f"o{i}")]) for i in (11, 13, 21, 11))
    out = parse_chunk_output(text, 11, 20)
    assert [s.index for s in out] == list(range(11, 21))
    assert out[0].thought_summary == "t11" and out[2].obs_summary == "o13"
    assert out[1].missing and out[1].obs_summary == PLACEHOLDER


noise = st.lists(st.tuples(st.integers(-5, 40), st.text(max_size=10)), max_size=30)


@given(noise, st.integers(1, 20), st.integers(0, 15))
def test_merge_one_step_per_index(blocks, start, width):
    end = start + width
    text = "junk\n" + "".join(render_block(i, [("THOUGHT", t), ("OBSERVATION", t)]) for i, t in blocks)
    assert [s.index for s in parse_chunk_output(text, start, end)] == list(range(start, end + 1))


def _steps_with_markers(marked):
    return [SummaryStep(i, "t", f"<OBS: big dump {i}>" if i in marked else "plain") for i in range(1, 11)]


def test_backfill_two_markers():
    raw = {i: f"RAW-{i}" for i in range(1, 11)}
    out = backfill_placeholders(_steps_with_markers({2, 7}), raw, 3)
    assert out.backfill_count == 2
    assert out.steps[1].obs_summary.endswith(f"\n{BACKFILL_LABEL}\nRAW-2")


def test_backfill_cap_prefers_lowest_indices():
    raw = {i: f"RAW-{i}" for i in range(1, 11)}
    out = backfill_placeholders(list(reversed(_steps_with_markers({9, 2, 5, 3, 8}))), raw, 3)
    assert out.backfill_count == 3
    assert [s.index for s in out.steps if s.backfilled] == [2, 3, 5]


def test_backfill_identity_without_markers():
    steps = _steps_with_markers(set())
    assert backfill_placeholders(steps, {}, 3).steps == tuple(steps)


@given(st.sets(st.integers(1, 10)), st.integers(0, 5), st.text(max_size=30))
def test_backfill_invariants(marked, cap, raw_text):
    raw = {i: raw_text + str(i) for i in range(1, 11)}
    out = backfill_placeholders(_steps_with_markers(marked), raw, cap)
    assert out.backfill_count <= cap
    chosen = [s.index for s in out.steps if s.backfilled]
    assert chosen == sorted(marked)[:cap]
    for s in out.steps:
        if s.backfilled:
            assert raw[s.index] in s.obs_summary


def echo_backend(fail_chunk: int | None = None) -> ScriptedBackend:
    """Summarizes exactly the steps named in the user message."""

    def respond(request, index):
        if request.meta.get("chunk") == fail_chunk:
            raise BackendFailure("down")
        idx = sorted({int(m) for m in re.findall(r"=== STEP (\d+) ===", request.last_user)})
        return "".join(render_block(i, [("THOUGHT", f"s{i}"), ("OBSERVATION", f"<OBS: {i}>" if i == 12 else f"o{i}")]) for i in idx)

    return ScriptedBackend([], respond)


def test_summarize_25_steps():
    pack = load_pack("default")
    backend = echo_backend()
    summary = summarize_trajectory(log_of(25), backend, pack)
    assert [s.index for s in summary.steps] == list(range(1, 26))
    assert len(backend.log) == 3
    assert summary.steps[11].backfilled and "raw observation 12" in summary.steps[11].obs_summary


def test_ten_steps_single_call():
    backend = echo_backend()
    summarize_trajectory(log_of(10), backend, load_pack("default"))
    assert len(backend.log) == 1


def test_failed_chunk_degrades_to_placeholders():
    summary = summarize_trajectory(log_of(25), echo_backend(fail_chunk=1), load_pack("default"))
    missing = [s.index for s in summary.steps if s.missing]
    assert missing == list(range(11, 21))
    assert summary.steps[0].thought_summary == "s1" and summary.steps[24].thought_summary == "s25"


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 100))
def test_fan_out_matches_sequential(n):
    pack = load_pack("default")
    a = summarize_trajectory(log_of(n), echo_backend(), pack, fan_out=1)
    b = summarize_trajectory(log_of(n), echo_backend(), pack, fan_out=4)
    assert a == b
