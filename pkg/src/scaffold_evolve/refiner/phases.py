"""Layer-wise mutation: prompts per phase, apply, validate, revert on failure."""

from __future__ import annotations

import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..backends import ChatRequest, ModelBackend, message
from ..errors import BackendFailure, EvolveError
from ..prompts import HOLISTIC_CARD, PHASE_CARDS, REFINER_SYSTEM, REFINER_USER, PromptPack
from ..runtime import ParseError, ParseErrorKind, load_driver, render_parse_error
from ..scaffold import (
    DEFAULT_LAYER_MAP,
    DRIVER_FILE,
    INSTANCE_TEMPLATE,
    OBSERVATION_TEMPLATE,
    PARSE_ERROR_TEMPLATE,
    PHASE_ORDER,
    SKILLS_DIR,
    SYSTEM_TEMPLATE,
    TEMPLATE_FILES,
    AgentScaffold,
    LayerId,
    LayerMap,
    ScaffoldDiff,
    diff_files,
    read_tree,
    scaffold_from_files,
)
from ..templating import render
from .apply import (
    DEFAULT_POLICY,
    DEFAULT_THETA,
    ApplyReport,
    SafetyPolicy,
    ValidationError,
    Validator,
    apply_actions,
    validate_tree,
)
from .patches import parse_patches

PHASE_NUMBER = {layer: i for i, layer in enumerate(PHASE_ORDER, start=1)}

# Sample values used to render every template once during the dry run.
_DRY_RUN_CONTEXT = {
    SYSTEM_TEMPLATE: {"Role_and_Env": "role", "command_docs": "docs", "skill_descriptions": "- a: b"},
    INSTANCE_TEMPLATE: {"MISSION_CONTEXT": "mission"},
    OBSERVATION_TEMPLATE: {"out": "output", "returncode": 0, "timed_out": True, "cwd": "/tmp"},
}


@dataclass(frozen=True)
class MutationContext:
    """Evidence a refiner call sees about the scaffold being mutated."""

    summary: str
    diagnosis: str
    node_id: str
    parent_patch: ScaffoldDiff | None = None
    grandparent_report: tuple[str, str] | None = None
    gen0_system_template: str = ""


@dataclass
class PhaseResult:
    phase: LayerId | None
    response: str = ""
    report: ApplyReport = field(default_factory=ApplyReport)
    errors: list[ValidationError] = field(default_factory=list)
    reverted: bool = False
    call_failed: bool = False

    @property
    def ok(self) -> bool:
        return not self.reverted

    def to_dict(self) -> dict[str, object]:
        return {
            "phase": None if self.phase is None else self.phase.value,
            "actions": self.report.to_dict(),
            "errors": [{"path": e.path, "reason": e.reason} for e in self.errors],
            "reverted": self.reverted,
            "call_failed": self.call_failed,
        }


def patch_sections(diff: ScaffoldDiff | None) -> dict[str, object]:
    """Shape a parent diff the way the refiner user prompt expects it."""
    if diff is None or not diff:
        return {}
    out: dict[str, object] = {DRIVER_FILE: "", "prompts": {}, "skills": {}}
    for path in diff.paths:
        text = diff.files[path].text
        if path == DRIVER_FILE:
            out[DRIVER_FILE] = text
        elif path.startswith(SKILLS_DIR + "/"):
            out["skills"][path] = text  # type: ignore[index]
        else:
            out["prompts"][path] = text  # type: ignore[index]
    return out


def skill_context(scaffold: AgentScaffold) -> str:
    return "\n".join(f"- {s.name}: {' '.join(s.description.split())}" for s in scaffold.skills)


def report_text(summary: str, diagnosis: str) -> str:
    if diagnosis.strip():
        return f"{diagnosis.strip()}\n\n## Trajectory summary\n{summary}"
    return summary


def build_phase_messages(
    pack: PromptPack, scaffold: AgentScaffold, ctx: MutationContext, phase: LayerId | None
) -> list[dict[str, str]]:
    gp = [ctx.grandparent_report] if ctx.grandparent_report else []
    base = pack.render(
        REFINER_USER,
        patch=patch_sections(ctx.parent_patch),
        gp_summaries=gp,
        p_summaries=[(ctx.node_id, report_text(ctx.summary, ctx.diagnosis))],
        prompt_templates=[(name, scaffold.text(name)) for name in TEMPLATE_FILES],
        agent_implementation=scaffold.text(DRIVER_FILE),
        skill_context=skill_context(scaffold),
    )
    card = HOLISTIC_CARD if phase is None else PHASE_CARDS[PHASE_NUMBER[phase] - 1]
    tail = pack.render(card, gen0_system_template=ctx.gen0_system_template)
    return [message("system", pack.render(REFINER_SYSTEM)), message("user", base.rstrip("\n") + "\n\n" + tail)]


def dry_run(files: Mapping[str, bytes], layer_map: LayerMap = DEFAULT_LAYER_MAP) -> list[ValidationError]:
    """Load the tree as a scaffold, import its driver and render its templates."""
    try:
        scaffold = scaffold_from_files(files, layer_map)
        driver = load_driver(scaffold.text(DRIVER_FILE))
        try:
            sample = driver.format_output("out", "err", 0)
        except Exception as exc:  # evolved code may raise anything
            return [ValidationError(DRIVER_FILE, f"format_output raised {exc!r}")]
        if not isinstance(sample, str):
            return [ValidationError(DRIVER_FILE, "format_output must return text")]
        for name, ctx in _DRY_RUN_CONTEXT.items():
            render(scaffold.text(name), name, **ctx)
        for kind in ParseErrorKind:
            render_parse_error(ParseError(kind, 2), scaffold)
    except EvolveError as exc:
        return [ValidationError("<scaffold>", f"{type(exc).__name__}: {exc}")]
    return []


def restore(root: Path, files: Mapping[str, bytes]) -> None:
    for child in list(root.iterdir()):
        if child.is_dir():
            shutil.rmtree(child)
        else:
            child.unlink()
    for rel, data in files.items():
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    (root / SKILLS_DIR).mkdir(exist_ok=True)


def run_phase(
    root: Path,
    ctx: MutationContext,
    backend: ModelBackend,
    pack: PromptPack,
    phase: LayerId | None,
    child_id: str,
    *,
    theta: float = DEFAULT_THETA,
    layer_map: LayerMap = DEFAULT_LAYER_MAP,
    policy: SafetyPolicy = DEFAULT_POLICY,
    validators: Mapping[str, Validator] | None = None,
    meta: Mapping[str, object] | None = None,
) -> PhaseResult:
    """One refiner call; the working copy is restored if the result is invalid."""
    before = read_tree(root)
    scaffold = scaffold_from_files(before, layer_map)
    messages = build_phase_messages(pack, scaffold, ctx, phase)
    label: object = "holistic" if phase is None else PHASE_NUMBER[phase]
    request = ChatRequest("refiner", child_id, tuple(messages), {"phase": label, **(meta or {})})
    result = PhaseResult(phase)
    try:
        result.response = backend.complete(request)
    except BackendFailure:
        result.call_failed = True
        return result
    parsed = parse_patches(result.response)
    result.report = apply_actions(root, parsed.actions, phase, theta, layer_map, policy)
    result.report.notes.extend(parsed.notes)
    result.errors = validate_tree(root, validators)
    if not result.errors:
        result.errors = dry_run(read_tree(root), layer_map)
    if result.errors:
        restore(root, before)
        result.reverted = True
    return result


@dataclass
class ChildResult:
    child_id: str
    files: dict[str, bytes]
    phases: list[PhaseResult]
    valid: bool
    reason: str = ""


def mutate_child(
    parent: AgentScaffold,
    ctx: MutationContext,
    backend: ModelBackend,
    pack: PromptPack,
    child_id: str,
    *,
    holistic: bool = False,
    on_phase_failure: str = "revert",
    theta: float = DEFAULT_THETA,
    policy: SafetyPolicy = DEFAULT_POLICY,
    validators: Mapping[str, Validator] | None = None,
) -> ChildResult:
    """Four sequential phases (or one holistic call) on a private working copy."""
    phases: Sequence[LayerId | None] = (None,) if holistic else PHASE_ORDER
    with tempfile.TemporaryDirectory(prefix=f"child-{child_id}-") as tmp:
        root = Path(tmp)
        parent.write_to(root)
        results = []
        for phase in phases:
            res = run_phase(
                root, ctx, backend, pack, phase, child_id,
                theta=theta, layer_map=parent.layer_map, policy=policy, validators=validators,
            )
            results.append(res)
            if res.reverted and on_phase_failure == "discard":
                return ChildResult(child_id, read_tree(root), results, False, "phase failed validation")
        files = read_tree(root)
        errors = validate_tree(root, validators) or dry_run(files, parent.layer_map)
    if errors:
        return ChildResult(child_id, files, results, False, "; ".join(f"{e.path}: {e.reason}" for e in errors))
    return ChildResult(child_id, files, results, True)


def child_diff(parent: AgentScaffold, child: ChildResult) -> ScaffoldDiff:
    return diff_files(parent.files, child.files, parent.layer_map)


def mutate(
    parent: AgentScaffold,
    ctx: MutationContext,
    backend: ModelBackend,
    pack: PromptPack,
    child_ids: Sequence[str],
    *,
    fan_out: int = 1,
    **options: object,
) -> list[ChildResult]:
    """Independent children, one per id, returned in id order (valid or not)."""

    def one(child_id: str) -> ChildResult:
        return mutate_child(parent, ctx, backend, pack, child_id, **options)  # type: ignore[arg-type]

    if fan_out > 1 and len(child_ids) > 1:
        with ThreadPoolExecutor(max_workers=fan_out) as pool:
            return list(pool.map(one, child_ids))
    return [one(c) for c in child_ids]
