"""Chunked trajectory summarization with verbatim backfill of flagged observations."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .backends import ChatRequest, ModelBackend, message
from .errors import BackendFailure, EmptyTrajectory, MalformedLog
from .prompts import SUMMARIZER_SYSTEM, SUMMARIZER_USER, PromptPack
from .trajectory import parse_framed, render_block

DEFAULT_WINDOW = 10
DEFAULT_BACKFILL_CAP = 3
PREVIEW_CAP = 2048
OBS_MARKER = "<OBS:"
BACKFILL_LABEL = "Important raw obs:"
PLACEHOLDER = "[no summary produced for this step]"


@dataclass(frozen=True)
class RawStep:
    index: int
    thought: str
    action: str | None
    observation: str
    returncode: str | None = None


@dataclass(frozen=True)
class ChunkSpec:
    start: int
    end: int
    prev_context: str = ""


@dataclass(frozen=True)
class SummaryStep:
    index: int
    thought_summary: str
    obs_summary: str
    backfilled: bool = False
    missing: bool = False


@dataclass(frozen=True)
class TrajectorySummary:
    steps: tuple[SummaryStep, ...]
    backfill_count: int = 0

    def render(self) -> str:
        return "".join(
            render_block(s.index, [("THOUGHT", s.thought_summary), ("OBSERVATION", s.obs_summary)])
            for s in self.steps
        )


def parse_steps(log: str) -> list[RawStep]:
    """Records in log order, renumbered 1..N; absent fields become empty."""
    blocks = parse_framed(log)
    if not blocks:
        raise MalformedLog("no '=== STEP n ===' header found")
    return [
        RawStep(
            i,
            b.fields.get("THOUGHT", ""),
            b.fields.get("ACTION"),
            b.fields.get("OBSERVATION", ""),
            b.fields.get("RETURNCODE"),
        )
        for i, b in enumerate(blocks, start=1)
    ]


def make_chunks(total: int, window: int = DEFAULT_WINDOW) -> list[ChunkSpec]:
    if window < 1:
        raise ValueError("window must be at least 1")
    if total <= 0:
        raise EmptyTrajectory("trajectory has no steps")
    return [ChunkSpec(s, min(s + window - 1, total)) for s in range(1, total + 1, window)]


def preview(steps: list[RawStep], start: int, window: int = DEFAULT_WINDOW, cap: int = PREVIEW_CAP) -> str:
    """Continuity context: up to ``window`` steps before ``start``, capped at ``cap`` bytes."""
    lines = []
    for s in steps:
        if max(1, start - window) <= s.index < start:
            first = next((ln for ln in s.observation.splitlines() if ln.strip()), "")
            thought = " ".join(s.thought.split())
            lines.append(f"Step {s.index}: {thought} | obs: {first.strip()}")
    text = "\n".join(lines)
    data = text.encode("utf-8")
    if len(data) > cap:
        text = data[:cap].decode("utf-8", errors="ignore")
    return text


def render_raw(steps: list[RawStep]) -> str:
    return "".join(
        render_block(
            s.index,
            [("THOUGHT", s.thought), ("ACTION", s.action), ("OBSERVATION", s.observation), ("RETURNCODE", s.returncode)],
        )
        for s in steps
    )


def placeholder(index: int) -> SummaryStep:
    return SummaryStep(index, PLACEHOLDER, PLACEHOLDER, missing=True)


def parse_chunk_output(text: str, start: int, end: int) -> list[SummaryStep]:
    """One step per index in [start, end]; out-of-range and duplicate blocks dropped."""
    found: dict[int, SummaryStep] = {}
    for block in parse_framed(text):
        if start <= block.index <= end and block.index not in found:
            found[block.index] = SummaryStep(
                block.index,
                block.fields.get("THOUGHT", "").strip(),
                block.fields.get("OBSERVATION", "").strip(),
            )
    return [found.get(i) or placeholder(i) for i in range(start, end + 1)]


def backfill_placeholders(
    steps: list[SummaryStep] | tuple[SummaryStep, ...],
    raw_observations: dict[int, str],
    cap: int = DEFAULT_BACKFILL_CAP,
) -> TrajectorySummary:
    out = []
    count = 0
    for s in sorted(steps, key=lambda s: s.index):
        if count < cap and OBS_MARKER in s.obs_summary and s.index in raw_observations:
            s = replace(
                s,
                obs_summary=f"{s.obs_summary}\n{BACKFILL_LABEL}\n{raw_observations[s.index]}",
                backfilled=True,
            )
            count += 1
        out.append(s)
    return TrajectorySummary(tuple(out), count)


def chunk_messages(pack: PromptPack, steps: list[RawStep], chunk: ChunkSpec, total: int) -> list[dict[str, str]]:
    body = [s for s in steps if chunk.start <= s.index <= chunk.end]
    ctx = {"start_step": chunk.start, "end_step": chunk.end, "total_steps": total}
    return [
        message("system", pack.render(SUMMARIZER_SYSTEM, **ctx)),
        message(
            "user",
            pack.render(SUMMARIZER_USER, raw_content=render_raw(body), previous_context=chunk.prev_context, **ctx),
        ),
    ]


def summarize_trajectory(
    log: str,
    backend: ModelBackend,
    pack: PromptPack,
    window: int = DEFAULT_WINDOW,
    cap: int = DEFAULT_BACKFILL_CAP,
    node_id: str = "summary",
    fan_out: int = 1,
) -> TrajectorySummary:
    steps = parse_steps(log)
    chunks = [
        replace(c, prev_context=preview(steps, c.start, window))
        for c in make_chunks(len(steps), window)
    ]

    def run(pair: tuple[int, ChunkSpec]) -> list[SummaryStep]:
        i, chunk = pair
        request = ChatRequest(
            "summarizer", node_id, tuple(chunk_messages(pack, steps, chunk, len(steps))), {"chunk": i}
        )
        try:
            text = backend.complete(request)
        except BackendFailure:
            return [placeholder(j) for j in range(chunk.start, chunk.end + 1)]
        return parse_chunk_output(text, chunk.start, chunk.end)

    if fan_out > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=fan_out) as pool:
            results = list(pool.map(run, enumerate(chunks)))
    else:
        results = [run(pair) for pair in enumerate(chunks)]
    merged = [s for part in results for s in part]
    return backfill_placeholders(merged, {s.index: s.observation for s in steps}, cap)
