from __future__ import annotations

import re

import pytest
from hypothesis import given, settings, strategies as st

from scaffold_evolve.errors import ConfigError, DiagnosisDisabled
from scaffold_evolve.prompts import (
    EUREKA_SYSTEM,
    HOLISTIC_CARD,
    PACK_IDS,
    PHASE_CARDS,
    REFINER_USER,
    SUMMARIZER_SYSTEM,
    SUMMARIZER_USER,
    load_pack,
)


def test_default_pack_complete():
    pack = load_pack("default")
    assert pack.diagnosis_enabled and not pack.holistic
    assert all(pack.has(c) for c in PHASE_CARDS)


def test_holistic_pack_swaps_phase_cards():
    pack = load_pack("ablation-holistic")
    assert pack.holistic and pack.has(HOLISTIC_CARD)
    assert not any(pack.has(c) for c in PHASE_CARDS)
    assert pack.templates[SUMMARIZER_SYSTEM] == load_pack("default").templates[SUMMARIZER_SYSTEM]


def test_no_diagnosis_pack():
    pack = load_pack("ablation-no-diagnosis")
    assert not pack.diagnosis_enabled and not pack.has(EUREKA_SYSTEM)
    assert pack.templates[SUMMARIZER_SYSTEM] != load_pack("default").templates[SUMMARIZER_SYSTEM]
    with pytest.raises(DiagnosisDisabled):
        pack.require_diagnosis()


def test_unknown_pack():
    with pytest.raises(ConfigError):
        load_pack("nope")


def test_pack_extends_and_omit(tmp_path):
    f = tmp_path / "mine.yaml"
    f.write_text("extends: default\nomit: [system_prompt_eureka]\nuser_prompt_eureka: 'x {{ raw_content }}'\n")
    pack = load_pack(f)
    assert not pack.diagnosis_enabled
    assert pack.render("user_prompt_eureka", raw_content="y") == "x y"


@pytest.mark.parametrize("pack_id", PACK_IDS)
def test_cards_are_verbatim(pack_id, reference_text):
    """Every literal line of every shipped card occurs in the reference text."""
    for name, body in load_pack(pack_id).templates.items():
        literal = [ln.strip() for ln in body.splitlines() if ln.strip() and "{%" not in ln and "{{" not in ln]
        missing = [ln for ln in literal if ln not in reference_text]
        assert not missing, (name, missing[:3])


text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=60)


@settings(max_examples=40, deadline=None)
@given(text, text, st.integers(1, 90), text)
def test_cards_render_without_unresolved_slots(raw, prev, start, skill_ctx):
    for pack_id in PACK_IDS:
        pack = load_pack(pack_id)
        out = [
            pack.render(SUMMARIZER_USER, raw_content=raw, start_step=start, end_step=start + 9,
                        total_steps=start + 20, previous_context=prev),
            pack.render(
                REFINER_USER,
                patch={"agent.py": raw, "prompts": {"system_template.txt": prev}, "skills": {}},
                gp_summaries=[("0", prev)],
                p_summaries=[("0.1", raw)],
                prompt_templates=[("system_template.txt", raw)],
                agent_implementation=prev,
                skill_context=skill_ctx,
            ),
        ]
        if pack.diagnosis_enabled:
            out.append(pack.render("user_prompt_eureka", raw_content=raw))
        for card in PHASE_CARDS + (HOLISTIC_CARD,):
            if pack.has(card):
                out.append(pack.render(card, gen0_system_template=prev))
        for rendered in out:
            stripped = rendered
            for value in (raw, prev, skill_ctx):
                if value:
                    stripped = stripped.replace(value, "")
            assert not re.search(r"\{\{.*?\}\}|\{%.*?%\}", stripped)
