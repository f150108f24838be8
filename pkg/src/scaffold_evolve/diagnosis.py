"""Diagnosis prompts, the four-section report grammar, scores and sibling ranking."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

from .backends import ChatRequest, ModelBackend, message
from .challenge import Challenge
from .errors import BackendFailure, ScoreError, ScoreMissing, ScoreOutOfRange
from .prompts import EUREKA_SYSTEM, EUREKA_USER, PromptPack
from .summarizer import TrajectorySummary


class Priority(str, Enum):
    P0 = "P0"
    P1 = "P1"
    P2 = "P2"


class Classification(str, Enum):
    KNOWLEDGE_GAP = "Knowledge Gap"
    EXECUTION_NOISE = "Execution Noise"
    STRATEGY_DIVERGENCE = "Strategy Divergence"
    TOOL_MISUSE = "Tool Misuse"
    REASONING_FLAW = "Reasoning Flaw"
    MEMORY_LIMITATION = "Memory Limitation"
    VERIFICATION_GAP = "Verification Gap"
    PREREQUISITE_VIOLATION = "Prerequisite Violation"


def _squash(text: str) -> str:
    return re.sub(r"[^a-z]", "", text.lower())


_CLASS_BY_KEY = {_squash(c.value): c for c in Classification}


def parse_classification(text: str) -> Classification | None:
    """First variant named in ``text``, ignoring case, spacing and brackets."""
    for part in re.split(r"[|/,;\n]", text):
        hit = _CLASS_BY_KEY.get(_squash(part))
        if hit is not None:
            return hit
    return None


@dataclass
class Weakness:
    title: str
    priority: Priority
    description: str = ""
    where_shown: str = ""
    steps_wasted: str = ""
    earliest_pivot: str = ""
    blocking_argument: str = ""
    impact: str = ""
    root_cause: str = ""
    root_cause_inference: bool = False
    classification: Classification | None = None
    counterfactual: str = ""


@dataclass
class DiagnosisReport:
    truths: list[str] = field(default_factory=list)
    highlights: list[str] = field(default_factory=list)
    weaknesses: list[Weakness] = field(default_factory=list)
    assessment: str = ""
    score: int | None = None
    score_error: str | None = None
    raw: str = ""

    @property
    def effective_score(self) -> int:
        return 0 if self.score is None else self.score

    def sidecar(self) -> dict[str, Any]:
        return {
            "score": self.score,
            "score_error": self.score_error,
            "counts": {
                "truths": len(self.truths),
                "highlights": len(self.highlights),
                "weaknesses": len(self.weaknesses),
            },
            "truths": self.truths,
            "highlights": self.highlights,
            "weaknesses": [
                {
                    **asdict(w),
                    "priority": w.priority.value,
                    "classification": w.classification.value if w.classification else None,
                }
                for w in self.weaknesses
            ],
            "assessment": self.assessment,
        }


# -- score ---------------------------------------------------------------------

_SCORE_RE = re.compile(
    r"^[ \t>*_-]*(?:\d+[.)][ \t]*)?[*_]*SCORE[*_]*[ \t]*:[*_ \t]*(-?\d+)[*_ \t]*(?:/[ \t]*100)?[ \t]*$",
    re.IGNORECASE | re.MULTILINE,
)


def extract_score(text: str) -> int:
    matches = _SCORE_RE.findall(text)
    if not matches:
        raise ScoreMissing("no 'SCORE: <integer>' line found")
    value = int(matches[-1])
    if not 0 <= value <= 100:
        raise ScoreOutOfRange(value)
    return value


# -- report grammar --------------------------------------------------------------

_SECTION_RE = re.compile(r"^[ \t]*#{1,6}[ \t]*([0-3])[ \t]*[.):]?(?:[ \t].*)?$", re.MULTILINE)
_WEAKNESS_RE = re.compile(
    r"^[ \t]*[*_#]*[ \t]*Weakness[ \t]+(\d+)[ \t]*\([ \t]*(P[0-2])[ \t]*\)[ \t]*:?[ \t]*(.*?)[ \t*_]*$",
    re.IGNORECASE,
)
_FIELDS = {
    "description": "description",
    "whereitshowsup": "where_shown",
    "stepswasted": "steps_wasted",
    "earliestpivotsignal": "earliest_pivot",
    "blockingargument": "blocking_argument",
    "impact": "impact",
    "rootcause": "root_cause",
    "classification": "classification",
    "counterfactual": "counterfactual",
}
_FIELD_RE = re.compile(r"^[ \t]*[*-][ \t]*[*_]*([A-Za-z][A-Za-z \t]*?)[*_]*[ \t]*:[*_]*[ \t]*(.*)$")
_BULLET_RE = re.compile(r"^[ \t]*(?:[-*+]|\d+[.)])[ \t]+(.*)$")


def _sections(text: str) -> dict[int, str]:
    found: dict[int, str] = {}
    heads = list(_SECTION_RE.finditer(text))
    for i, m in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(text)
        num = int(m.group(1))
        if num not in found:
            found[num] = text[m.end():end].strip("\n")
    return found


def _bullets(body: str) -> list[str]:
    items: list[str] = []
    for line in body.splitlines():
        m = _BULLET_RE.match(line)
        if m:
            items.append(m.group(1).strip())
        elif items and line.strip() and line[:1] in " \t":
            items[-1] += " " + line.strip()
    return items


def _weaknesses(body: str) -> list[Weakness]:
    out: list[Weakness] = []
    current: Weakness | None = None
    attr: str | None = None
    values: dict[str, list[str]] = {}

    def close() -> None:
        if current is None:
            return
        for name, parts in values.items():
            text = " ".join(p for p in parts if p).strip()
            if name == "classification":
                current.classification = parse_classification(text.strip("[] "))
            else:
                setattr(current, name, text)
        current.root_cause_inference = "INFERENCE" in current.root_cause

    for line in body.splitlines():
        head = _WEAKNESS_RE.match(line)
        if head:
            close()
            current = Weakness(title=head.group(3).strip(), priority=Priority(head.group(2).upper()))
            out.append(current)
            attr, values = None, {}
            continue
        if current is None:
            continue
        fm = _FIELD_RE.match(line)
        key = _squash(fm.group(1)) if fm else ""
        if fm and key in _FIELDS:
            attr = _FIELDS[key]
            values[attr] = [fm.group(2).strip()]
        elif attr is not None and line.strip():
            values[attr].append(line.strip())
    close()
    return out


def parse_diagnosis(text: str) -> DiagnosisReport:
    """Tolerant parse: never raises; a bad score is reported in ``score_error``."""
    sections = _sections(text)
    report = DiagnosisReport(
        truths=_bullets(sections.get(0, "")),
        highlights=_bullets(sections.get(1, "")),
        weaknesses=_weaknesses(sections.get(2, "")),
        assessment=sections.get(3, "").strip(),
        raw=text,
    )
    try:
        report.score = extract_score(text)
    except ScoreError as exc:
        report.score_error = f"{type(exc).__name__}: {exc}"
    return report


def render_diagnosis(report: DiagnosisReport) -> str:
    lines = ["### 0. Validated Truths"]
    lines += [f"- {t}" for t in report.truths]
    lines += ["", "### 1. Strategic Highlights"]
    lines += [f"- {h}" for h in report.highlights]
    lines += ["", "### 2. Weakness Analysis"]
    for i, w in enumerate(report.weaknesses, start=1):
        root = w.root_cause + (" (INFERENCE)" if w.root_cause_inference and "INFERENCE" not in w.root_cause else "")
        lines += [
            f"**Weakness {i} ({w.priority.value}): {w.title}**",
            f"* Description: {w.description}",
            f"* Where it shows up: {w.where_shown}",
            f"* Steps wasted: {w.steps_wasted}",
            f"* Earliest pivot signal: {w.earliest_pivot}",
            f"* Blocking argument: {w.blocking_argument}",
            f"* Impact: {w.impact}",
            f"* Root cause: {root}",
            f"* Classification: {w.classification.value if w.classification else ''}",
            f"* Counterfactual: {w.counterfactual}",
            "",
        ]
    lines += ["### 3. Final Assessment"]
    if report.assessment:
        lines.append(report.assessment)
    if report.score is not None and not _SCORE_RE.search(report.assessment):
        lines.append(f"SCORE: {report.score}")
    return "\n".join(lines) + "\n"


# -- prompting -------------------------------------------------------------------


def diagnosis_input(summary: TrajectorySummary, challenge: Challenge) -> str:
    return f"# Challenge: {challenge.name}\n{challenge.prompt.strip()}\n\n# Trajectory\n{summary.render()}"


def build_diagnosis_prompt(
    summary: TrajectorySummary, challenge: Challenge, pack: PromptPack
) -> list[dict[str, str]]:
    pack.require_diagnosis()
    return [
        message("system", pack.render(EUREKA_SYSTEM)),
        message("user", pack.render(EUREKA_USER, raw_content=diagnosis_input(summary, challenge))),
    ]


def diagnose(
    summary: TrajectorySummary,
    challenge: Challenge,
    pack: PromptPack,
    backend: ModelBackend,
    node_id: str = "diagnosis",
) -> DiagnosisReport:
    """Ask for a report; any failure yields an empty report scored 0."""
    messages = build_diagnosis_prompt(summary, challenge, pack)
    try:
        text = backend.complete(ChatRequest("diagnosis", node_id, tuple(messages)))
    except BackendFailure as exc:
        return DiagnosisReport(score=0, score_error=f"BackendFailure: {exc}")
    report = parse_diagnosis(text)
    if report.score is None:
        return DiagnosisReport(score=0, score_error=report.score_error, raw=text)
    return report


def rank_siblings(nodes: Iterable[tuple[str, int | None]]) -> list[str]:
    """Descending by score; equal scores keep input (creation) order."""
    ordered = sorted(enumerate(nodes), key=lambda p: (-(p[1][1] or 0), p[0]))
    return [node_id for _, (node_id, _) in ordered]


def top_k(nodes: Sequence[tuple[str, int | None]], k: int) -> list[str]:
    return rank_siblings(nodes)[: max(0, min(k, len(nodes)))]
