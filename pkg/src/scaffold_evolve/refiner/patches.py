"""Tolerant extraction of XML patch actions from refiner output."""

from __future__ import annotations

import html
import re
from dataclasses import dataclass, field

ACTION_TAGS = ("replace_code", "create_file", "delete_file")


@dataclass(frozen=True)
class ReplaceCode:
    path: str
    search: str
    replace: str
    rationale: str = ""
    kind: str = "replace"


@dataclass(frozen=True)
class CreateFile:
    path: str
    content: str
    rationale: str = ""
    kind: str = "create"


@dataclass(frozen=True)
class DeleteFile:
    path: str
    rationale: str = ""
    kind: str = "delete"


PatchAction = ReplaceCode | CreateFile | DeleteFile


@dataclass
class ParsedPatches:
    actions: list[PatchAction] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


_OPEN_RE = re.compile(
    r"<(replace_code|create_file|delete_file)\s+path\s*=\s*(?:\"([^\"]*)\"|'([^']*)')\s*(/?)>"
)
_RATIONALE_RE = re.compile(r"<rationale>(.*?)</rationale>", re.DOTALL)
_PATCH_OPEN = "<patch>"


def normalize_body(text: str) -> str:
    """Drop the newline after an opening tag and the indent before a closing tag."""
    if text.startswith("\r\n"):
        text = text[2:]
    elif text.startswith("\n"):
        text = text[1:]
    return re.sub(r"\r?\n[ \t]*\Z", "", text)


def _inner(body: str, tag: str) -> str | None:
    start = body.find(f"<{tag}>")
    if start < 0:
        if re.search(rf"<{tag}\s*/>", body):
            return ""
        return None
    start += len(tag) + 2
    end = body.find(f"</{tag}>", start)
    if end < 0:
        return None
    return normalize_body(body[start:end])


def _rationale_before(text: str, pos: int) -> str:
    patch_start = text.rfind(_PATCH_OPEN, 0, pos)
    if patch_start < 0:
        return ""
    found = _RATIONALE_RE.findall(text, patch_start, pos)
    return found[-1].strip() if found else ""


def parse_patches(text: str) -> ParsedPatches:
    """Actions in source order; malformed fragments are skipped with a note."""
    out = ParsedPatches()
    pos = 0
    while True:
        m = _OPEN_RE.search(text, pos)
        if m is None:
            break
        tag, path = m.group(1), html.unescape(m.group(2) if m.group(2) is not None else m.group(3))
        rationale = _rationale_before(text, m.start())
        self_closing = m.group(4) == "/"
        if tag == "delete_file":
            if not self_closing:
                close = re.compile(r"\s*</delete_file>").match(text, m.end())
                pos = close.end() if close else m.end()
            else:
                pos = m.end()
            out.actions.append(DeleteFile(path, rationale))
            continue
        if self_closing:
            out.notes.append(f"<{tag} path={path!r}/> has no body; skipped")
            pos = m.end()
            continue
        end = text.find(f"</{tag}>", m.end())
        if end < 0:
            out.notes.append(f"<{tag} path={path!r}> is never closed; skipped")
            pos = m.end()
            continue
        body = text[m.end():end]
        if _OPEN_RE.search(body):
            out.notes.append(f"<{tag} path={path!r}> contains another action before closing; skipped")
            pos = m.end()
            continue
        pos = end + len(tag) + 3
        if tag == "replace_code":
            search, replace = _inner(body, "search"), _inner(body, "replace")
            if search is None or replace is None:
                out.notes.append(f"<replace_code path={path!r}> lacks a closed <search> or <replace>; skipped")
            elif not search.strip():
                out.notes.append(f"<replace_code path={path!r}> has an empty <search>; skipped")
            else:
                out.actions.append(ReplaceCode(path, search, replace, rationale))
        else:
            content = _inner(body, "content")
            if content is None:
                out.notes.append(f"<create_file path={path!r}> lacks a closed <content>; skipped")
            else:
                out.actions.append(CreateFile(path, content, rationale))
    return out
