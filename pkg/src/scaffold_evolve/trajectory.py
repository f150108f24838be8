"""Episode records and the step-framed text format shared by logs and summaries.

A framed document is a sequence of blocks::

    === STEP 3 ===
    THOUGHT:
    ...
    OBSERVATION:
    ...

Labels may also carry inline text (``THOUGHT: text``), which is how model
summaries are written. Content lines that would read as a header or label
are escaped with one extra leading backslash on write.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterable

from .difftext import split_lines

LABELS = ("THOUGHT", "ACTION", "OBSERVATION", "RETURNCODE")

_HEADER = r"[ \t]*===[ \t]*STEP[ \t]+(\d+)[ \t]*==="
_LABEL = r"[ \t]*\**(" + "|".join(LABELS) + r")\**[ \t]*:\**[ \t]?"
_HEADER_RE = re.compile(_HEADER, re.IGNORECASE)
_LABEL_RE = re.compile(_LABEL, re.IGNORECASE)
_NEEDS_ESCAPE = re.compile(r"\\*(?:" + _HEADER + "|" + _LABEL + ")", re.IGNORECASE)


class Status(str, Enum):
    SOLVED = "Solved"
    UNSOLVED = "Unsolved"


@dataclass(frozen=True)
class StepRecord:
    index: int
    thought: str
    action: str | None
    observation: str
    returncode: int | None = None
    timed_out: bool = False


@dataclass
class Trajectory:
    steps: list[StepRecord] = field(default_factory=list)
    status: Status = Status.UNSOLVED
    loaded_skills: list[str] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""

    def to_json(self) -> str:
        data = asdict(self)
        data["status"] = self.status.value
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        data = json.loads(text)
        return cls(
            steps=[StepRecord(**s) for s in data["steps"]],
            status=Status(data["status"]),
            loaded_skills=list(data.get("loaded_skills", [])),
            aborted=bool(data.get("aborted", False)),
            abort_reason=str(data.get("abort_reason", "")),
        )


def escape_content(text: str) -> str:
    return "".join("\\" + ln if _NEEDS_ESCAPE.match(ln) else ln for ln in split_lines(text))


def _unescape_line(line: str) -> str:
    if line.startswith("\\") and _NEEDS_ESCAPE.match(line[1:]):
        return line[1:]
    return line


def render_block(index: int, fields: Iterable[tuple[str, str | None]]) -> str:
    parts = [f"=== STEP {index} ===\n"]
    for label, content in fields:
        if content is None:
            continue
        parts.append(f"{label}:\n{escape_content(content)}\n")
    return "".join(parts)


def render_log(steps: Iterable[StepRecord]) -> str:
    out = []
    for s in steps:
        rc = None if s.action is None else ("none" if s.returncode is None else str(s.returncode))
        out.append(
            render_block(
                s.index,
                [("THOUGHT", s.thought), ("ACTION", s.action), ("OBSERVATION", s.observation), ("RETURNCODE", rc)],
            )
        )
    return "".join(out)


@dataclass
class FramedBlock:
    index: int
    fields: dict[str, str]


def parse_framed(text: str) -> list[FramedBlock]:
    """Split a framed document into blocks; tolerant of noise and preamble.

    A label repeated inside one block replaces the earlier field.
    """
    blocks: list[FramedBlock] = []
    current: FramedBlock | None = None
    label: str | None = None
    buf: list[str] = []

    def flush() -> None:
        if current is not None and label is not None:
            content = "".join(buf)
            if content.endswith("\n"):
                content = content[:-1]
            current.fields[label] = content

    for line in split_lines(text):
        header = _HEADER_RE.match(line)
        if header:
            flush()
            current = FramedBlock(int(header.group(1)), {})
            blocks.append(current)
            label, buf = None, []
            continue
        lab = _LABEL_RE.match(line)
        if lab and current is not None:
            flush()
            label = lab.group(1).upper()
            rest = line[lab.end():]
            buf = [rest] if rest not in ("", "\n") else []
            continue
        if label is not None:
            buf.append(_unescape_line(line))
    flush()
    return blocks
