"""Applying patch actions to a working tree: exact match, fuzzy fallback, safety."""

from __future__ import annotations

import difflib
import re
import shutil
import subprocess
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from ..errors import AmbiguousLayer, MalformedPath, TemplateError, ValidatorUnavailable
from ..scaffold import (
    DEFAULT_LAYER_MAP,
    DRIVER_FILE,
    SKILLS_DIR,
    TEMPLATE_FILES,
    TEMPLATE_SKILL,
    LayerId,
    LayerMap,
    attribute_layer,
    glob_match,
    normalize_path,
)
from ..templating import check_syntax
from .patches import CreateFile, DeleteFile, PatchAction, ReplaceCode

DEFAULT_THETA = 0.6
COMMENT_MARKERS = ("#", "//")
REGION_BEGIN = ">>> scoring region"
REGION_END = "<<< scoring region"


@dataclass(frozen=True)
class SafetyPolicy:
    protected: tuple[str, ...] = (f"{SKILLS_DIR}/{TEMPLATE_SKILL}/**", f"{SKILLS_DIR}/{TEMPLATE_SKILL}")
    region_files: tuple[str, ...] = (DRIVER_FILE,)
    region_begin: str = REGION_BEGIN
    region_end: str = REGION_END


DEFAULT_POLICY = SafetyPolicy()


# -- safety ----------------------------------------------------------------------


@dataclass(frozen=True)
class Safety:
    unsafe: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.unsafe


def is_unsafe(
    path: str,
    phase: LayerId | None,
    layer_map: LayerMap = DEFAULT_LAYER_MAP,
    policy: SafetyPolicy = DEFAULT_POLICY,
) -> Safety:
    """Path-level screen. ``phase=None`` admits any attributed layer."""
    if path.startswith("/") or re.match(r"^[A-Za-z]:[\\/]", path):
        return Safety(True, "absolute path")
    if ".." in re.split(r"[\\/]", path):
        return Safety(True, "path traversal")
    try:
        normalize_path(path)
    except MalformedPath as exc:
        return Safety(True, f"malformed path: {exc}")
    if any(glob_match(g, path) for g in policy.protected):
        return Safety(True, "protected path")
    try:
        layer = attribute_layer(path, layer_map)
    except AmbiguousLayer as exc:
        return Safety(True, str(exc))
    if layer is None:
        return Safety(True, "path belongs to no evolvable layer")
    if phase is not None and layer is not phase:
        return Safety(True, f"path belongs to {layer.value}, active phase is {phase.value}")
    return Safety(False)


def scoring_region(text: str, policy: SafetyPolicy = DEFAULT_POLICY) -> str | None:
    """The sentinel-delimited block, sentinels included, or None if absent."""
    lines = text.splitlines(keepends=True)
    begin = next((i for i, ln in enumerate(lines) if policy.region_begin in ln), None)
    if begin is None:
        return None
    end = next((i for i in range(begin + 1, len(lines)) if policy.region_end in lines[i]), None)
    if end is None:
        return "".join(lines[begin:])
    return "".join(lines[begin : end + 1])


# -- fingerprints and fuzzy matching -------------------------------------------------


def _strip_comment(line: str, markers: Sequence[str]) -> str:
    cut = len(line)
    for marker in markers:
        i = line.find(marker)
        if i >= 0:
            cut = min(cut, i)
    return line[:cut]


def fingerprint(text: str, markers: Sequence[str] = COMMENT_MARKERS) -> list[str]:
    return [" ".join(_strip_comment(line, markers).split()) for line in text.split("\n")]


@dataclass(frozen=True)
class FuzzyMatch:
    begin_line: int
    end_line: int
    quality: float


def similarity(a: Sequence[str], b: Sequence[str]) -> float:
    return difflib.SequenceMatcher(None, list(a), list(b), autojunk=False).ratio()


def fuzzy_locate(
    file_fp: Sequence[str], search_fp: Sequence[str], theta: float = DEFAULT_THETA
) -> FuzzyMatch | None:
    best = best_candidate(file_fp, search_fp)
    return best if best is not None and best.quality >= theta else None


def best_candidate(file_fp: Sequence[str], search_fp: Sequence[str]) -> FuzzyMatch | None:
    """Highest-quality window anchored on the first non-empty search line."""
    anchor = next((i for i, ln in enumerate(search_fp) if ln), None)
    if anchor is None:
        return None
    needle = list(search_fp[anchor:])
    best: FuzzyMatch | None = None
    for i, line in enumerate(file_fp):
        if line != needle[0]:
            continue
        window = file_fp[i : i + len(needle)]
        q = similarity(window, needle)
        if best is None or q > best.quality:
            best = FuzzyMatch(i, i + len(window) - 1, q)
    return best


def _indent_of(line: str) -> str:
    return line[: len(line) - len(line.lstrip(" \t"))]


def reindent(replacement: str, indent: str) -> str:
    lines = replacement.split("\n")
    body = [ln for ln in lines if ln.strip()]
    if not body:
        return replacement
    common = _indent_of(body[0])
    for ln in body[1:]:
        ind = _indent_of(ln)
        n = 0
        while n < min(len(common), len(ind)) and common[n] == ind[n]:
            n += 1
        common = common[:n]
    return "\n".join(indent + ln[len(common):] if ln.strip() else ln for ln in lines)


# -- apply -------------------------------------------------------------------------


class Outcome(str, Enum):
    APPLIED = "Applied"
    SKIPPED_UNSAFE = "SkippedUnsafe"
    SKIPPED_AMBIGUOUS = "SkippedAmbiguous"
    SKIPPED_NO_MATCH = "SkippedNoMatch"
    SKIPPED_EXISTS = "SkippedExists"
    FAILED = "Failed"


@dataclass(frozen=True)
class ActionResult:
    kind: str
    path: str
    outcome: Outcome
    detail: str = ""
    count: int | None = None
    quality: float | None = None
    fuzzy: bool = False

    def to_dict(self) -> dict[str, object]:
        return {
            "kind": self.kind,
            "path": self.path,
            "outcome": self.outcome.value,
            "detail": self.detail,
            "count": self.count,
            "quality": None if self.quality is None else round(self.quality, 6),
            "fuzzy": self.fuzzy,
        }


@dataclass
class ApplyReport:
    results: list[ActionResult] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def applied(self) -> list[ActionResult]:
        return [r for r in self.results if r.outcome is Outcome.APPLIED]

    def to_dict(self) -> dict[str, object]:
        return {"results": [r.to_dict() for r in self.results], "notes": list(self.notes)}


def splice_replace(text: str, search: str, replace: str) -> str:
    """Exact single-occurrence replacement; an empty replacement drops whole lines."""
    i = text.index(search)
    j = i + len(search)
    if replace == "" and (i == 0 or text[i - 1] == "\n") and text[j : j + 1] == "\n":
        j += 1
    return text[:i] + replace + text[j:]


def fuzzy_splice(text: str, match: FuzzyMatch, replace: str) -> str:
    lines = text.split("\n")
    indent = _indent_of(lines[match.begin_line])
    new = [] if replace == "" else reindent(replace, indent).split("\n")
    return "\n".join(lines[: match.begin_line] + new + lines[match.end_line + 1 :])


def _trim_blank_edges(text: str) -> str:
    lines = text.split("\n")
    while lines and not lines[0].strip():
        lines.pop(0)
    while lines and not lines[-1].strip():
        lines.pop()
    return "\n".join(lines)


def _replace(root: Path, action: ReplaceCode, theta: float, policy: SafetyPolicy) -> tuple[ActionResult, str | None]:
    target = root / action.path
    if not target.is_file():
        return ActionResult("replace", action.path, Outcome.FAILED, "file not found"), None
    text = target.read_bytes().decode("utf-8")
    n = text.count(action.search)
    if n == 1:
        return ActionResult("replace", action.path, Outcome.APPLIED, count=1), splice_replace(
            text, action.search, action.replace
        )
    if n > 1:
        return (
            ActionResult("replace", action.path, Outcome.SKIPPED_AMBIGUOUS, "ambiguous; refiner must add context", count=n),
            None,
        )
    search = _trim_blank_edges(action.search)
    best = best_candidate(fingerprint(text), fingerprint(search))
    if best is None or best.quality < theta:
        q = None if best is None else best.quality
        return ActionResult("replace", action.path, Outcome.SKIPPED_NO_MATCH, "no match", count=0, quality=q), None
    new = fuzzy_splice(text, best, action.replace)
    return ActionResult("replace", action.path, Outcome.APPLIED, count=0, quality=best.quality, fuzzy=True), new


def apply_actions(
    root: Path,
    actions: Iterable[PatchAction],
    phase: LayerId | None,
    theta: float = DEFAULT_THETA,
    layer_map: LayerMap = DEFAULT_LAYER_MAP,
    policy: SafetyPolicy = DEFAULT_POLICY,
) -> ApplyReport:
    root = Path(root)
    report = ApplyReport()
    for action in actions:
        kind = action.kind
        verdict = is_unsafe(action.path, phase, layer_map, policy)
        if verdict:
            report.results.append(ActionResult(kind, action.path, Outcome.SKIPPED_UNSAFE, verdict.reason))
            continue
        if kind == "delete" and any(glob_match(f, action.path) for f in policy.region_files):
            report.results.append(ActionResult(kind, action.path, Outcome.SKIPPED_UNSAFE, "holds the scoring region"))
            continue
        try:
            report.results.append(_apply_one(root, action, theta, policy))
        except (OSError, UnicodeDecodeError) as exc:
            report.results.append(ActionResult(kind, action.path, Outcome.FAILED, f"{type(exc).__name__}: {exc}"))
    return report


def _apply_one(root: Path, action: PatchAction, theta: float, policy: SafetyPolicy) -> ActionResult:
    target = root / action.path
    if isinstance(action, CreateFile):
        if target.exists():
            return ActionResult("create", action.path, Outcome.SKIPPED_EXISTS, "path already exists")
        target.parent.mkdir(parents=True, exist_ok=True)
        content = action.content if action.content.endswith("\n") or not action.content else action.content + "\n"
        target.write_bytes(content.encode("utf-8"))
        return ActionResult("create", action.path, Outcome.APPLIED)
    if isinstance(action, DeleteFile):
        if target.is_dir():
            shutil.rmtree(target)
        elif target.exists():
            target.unlink()
        else:
            return ActionResult("delete", action.path, Outcome.SKIPPED_NO_MATCH, "path not present")
        return ActionResult("delete", action.path, Outcome.APPLIED)
    assert isinstance(action, ReplaceCode)
    result, new_text = _replace(root, action, theta, policy)
    if new_text is None:
        return result
    if any(glob_match(f, action.path) for f in policy.region_files):
        old_text = target.read_bytes().decode("utf-8")
        if scoring_region(old_text, policy) != scoring_region(new_text, policy):
            return ActionResult("replace", action.path, Outcome.SKIPPED_UNSAFE, "touches the scoring region")
    target.write_bytes(new_text.encode("utf-8"))
    return result


# -- validation -------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationError:
    path: str
    reason: str


Validator = Union[Callable[[str, str], Optional[str]], Sequence[str]]


def _check_python(path: str, text: str) -> str | None:
    try:
        compile(text, path, "exec")
    except (SyntaxError, ValueError) as exc:
        return f"{type(exc).__name__}: {exc}"
    return None


def _check_template(path: str, text: str) -> str | None:
    try:
        check_syntax(text, path)
    except TemplateError as exc:
        return exc.reason
    return None


DEFAULT_VALIDATORS: dict[str, Validator] = {"*.py": _check_python, "template": _check_template}


def _classes(path: str) -> list[str]:
    keys = []
    if path.endswith(".py"):
        keys.append("*.py")
    if path in TEMPLATE_FILES:
        keys.append("template")
    return keys


def validate_tree(root: Path, validators: Mapping[str, Validator] | None = None) -> list[ValidationError]:
    """Run each file class's validator; a validator is a callable or an argv prefix."""
    validators = DEFAULT_VALIDATORS if validators is None else validators
    root = Path(root)
    errors: list[ValidationError] = []
    for p in sorted(root.rglob("*")):
        if not p.is_file() or "__pycache__" in p.parts:
            continue
        rel = p.relative_to(root).as_posix()
        for key in _classes(rel):
            check = validators.get(key)
            if check is None:
                continue
            if callable(check):
                try:
                    text = p.read_bytes().decode("utf-8")
                except UnicodeDecodeError as exc:
                    errors.append(ValidationError(rel, f"not UTF-8: {exc}"))
                    continue
                reason = check(rel, text)
            else:
                reason = _run_external(list(check), p)
            if reason:
                errors.append(ValidationError(rel, reason))
    return errors


def _run_external(argv: list[str], path: Path) -> str | None:
    try:
        proc = subprocess.run(argv + [str(path)], capture_output=True, text=True, timeout=60, check=False)
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise ValidatorUnavailable(f"cannot run {argv[0]!r}: {exc}") from exc
    if proc.returncode == 0:
        return None
    lines = (proc.stderr or proc.stdout).strip().splitlines()
    return lines[-1] if lines else f"exit status {proc.returncode}"
