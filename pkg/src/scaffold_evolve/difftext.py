"""Unified diff rendering and application for single text files.

Both directions are byte-exact for text, including a missing trailing
newline, so ``apply_unified(old, unified_diff(old, new)) == new``.
"""

from __future__ import annotations

import difflib
import re

NO_NEWLINE = "\\ No newline at end of file"
_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


def unified_diff(
    old: str | None, new: str | None, path: str, context: int = 3
) -> str:
    """Render a unified diff. ``None`` marks an absent file (create / delete)."""
    a = split_lines(old or "")
    b = split_lines(new or "")
    fromfile = "/dev/null" if old is None else f"a/{path}"
    tofile = "/dev/null" if new is None else f"b/{path}"
    out: list[str] = []
    for line in difflib.unified_diff(a, b, fromfile, tofile, n=context, lineterm="\n"):
        if line.endswith("\n"):
            out.append(line)
        else:
            out.append(line + "\n" + NO_NEWLINE + "\n")
    return "".join(out)


def split_lines(text: str) -> list[str]:
    """Split on ``\\n`` only, keeping terminators (unlike ``str.splitlines``)."""
    parts = text.split("\n")
    lines = [p + "\n" for p in parts[:-1]]
    if parts[-1]:
        lines.append(parts[-1])
    return lines


class PatchConflict(ValueError):
    pass


def apply_unified(old: str, diff_text: str) -> str:
    """Apply a single-file unified diff produced by :func:`unified_diff`."""
    src = split_lines(old)
    lines = split_lines(diff_text)
    out: list[str] = []
    pos = 0  # index into src
    i = 0
    while i < len(lines):
        m = _HUNK_RE.match(lines[i])
        if not m:
            i += 1
            continue
        start = int(m.group(1))
        old_len = int(m.group(2)) if m.group(2) is not None else 1
        # a zero-length old range names the line *before* the hunk
        begin = start if old_len == 0 else start - 1
        if begin < pos:
            raise PatchConflict("overlapping hunks")
        out.extend(src[pos:begin])
        pos = begin
        i += 1
        while i < len(lines) and not _HUNK_RE.match(lines[i]):
            line = lines[i]
            tag, body = line[:1], line[1:]
            if line.rstrip("\n") == NO_NEWLINE:
                # strip the newline of whichever line was emitted / consumed last
                prev = lines[i - 1][:1]
                if prev in (" ", "+") and out and out[-1].endswith("\n"):
                    out[-1] = out[-1][:-1]
            elif tag == " ":
                _expect(src, pos, body)
                out.append(src[pos])
                pos += 1
            elif tag == "-":
                _expect(src, pos, body)
                pos += 1
            elif tag == "+":
                out.append(body)
            i += 1
    out.extend(src[pos:])
    return "".join(out)


def _expect(src: list[str], pos: int, body: str) -> None:
    if pos >= len(src) or src[pos].rstrip("\n") != body.rstrip("\n"):
        raise PatchConflict(f"context mismatch at line {pos + 1}")
