"""The four-layer agent scaffold: layer attribution, loading, snapshots, diffs."""

from __future__ import annotations

import enum
import functools
import re
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Iterable, Mapping

from .difftext import apply_unified, unified_diff
from .errors import AmbiguousLayer, InvalidSkill, MalformedPath, MissingFile

SYSTEM_TEMPLATE = "system_template.txt"
INSTANCE_TEMPLATE = "instance_template.txt"
OBSERVATION_TEMPLATE = "observation_template.txt"
PARSE_ERROR_TEMPLATE = "output_parse_error_template.txt"
DRIVER_FILE = "agent.py"
SKILLS_DIR = "skills"
TEMPLATE_SKILL = "skill_template"
SKILL_DESCRIPTION = "description.md"
SKILL_PLAYBOOK = "SKILL.md"

REQUIRED_FILES = (
    SYSTEM_TEMPLATE,
    INSTANCE_TEMPLATE,
    OBSERVATION_TEMPLATE,
    PARSE_ERROR_TEMPLATE,
    DRIVER_FILE,
)
TEMPLATE_FILES = REQUIRED_FILES[:4]

SEED_DIR = Path(__file__).parent / "seed"


@functools.total_ordering
class LayerId(enum.Enum):
    STRATEGY = "Strategy"
    ENV_INTERFACE = "EnvInterface"
    DOMAIN_KNOWLEDGE = "DomainKnowledge"
    PERCEPTION = "Perception"

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, LayerId):
            return NotImplemented
        return PHASE_ORDER.index(self) < PHASE_ORDER.index(other)


# Mutation phases visit layers in this order.
PHASE_ORDER = (
    LayerId.STRATEGY,
    LayerId.ENV_INTERFACE,
    LayerId.DOMAIN_KNOWLEDGE,
    LayerId.PERCEPTION,
)


def normalize_path(path: str) -> str:
    """Validate a scaffold-relative path and return it unchanged.

    Rejects absolute paths, ``..``/``.`` segments, empty segments and
    backslashes rather than silently rewriting them.
    """
    if not path or path.startswith("/") or re.match(r"^[A-Za-z]:", path):
        raise MalformedPath(f"not a relative path: {path!r}")
    if "\\" in path or "\x00" in path:
        raise MalformedPath(f"illegal character in path: {path!r}")
    parts = path.split("/")
    if any(p in ("", ".", "..") for p in parts):
        raise MalformedPath(f"path is not normalized or escapes root: {path!r}")
    return path


@functools.lru_cache(maxsize=256)
def _glob_regex(pattern: str) -> re.Pattern[str]:
    out = []
    i = 0
    while i < len(pattern):
        if pattern.startswith("**", i):
            out.append(".*")
            i += 2
        elif pattern[i] == "*":
            out.append("[^/]*")
            i += 1
        elif pattern[i] == "?":
            out.append("[^/]")
            i += 1
        else:
            out.append(re.escape(pattern[i]))
            i += 1
    return re.compile("".join(out) + r"\Z")


def glob_match(pattern: str, path: str) -> bool:
    """Path glob where ``*`` stops at ``/`` and ``**`` crosses it."""
    return _glob_regex(pattern).match(path) is not None


@dataclass(frozen=True)
class LayerMap:
    rules: tuple[tuple[str, LayerId], ...]

    def files_for(self, layer: LayerId, paths: Iterable[str]) -> list[str]:
        return [p for p in paths if attribute_layer(p, self) is layer]


DEFAULT_LAYER_MAP = LayerMap(
    rules=(
        (SYSTEM_TEMPLATE, LayerId.STRATEGY),
        (INSTANCE_TEMPLATE, LayerId.ENV_INTERFACE),
        (DRIVER_FILE, LayerId.PERCEPTION),
        (OBSERVATION_TEMPLATE, LayerId.PERCEPTION),
        (PARSE_ERROR_TEMPLATE, LayerId.PERCEPTION),
        (f"{SKILLS_DIR}/**", LayerId.DOMAIN_KNOWLEDGE),
    )
)


def attribute_layer(path: str, layer_map: LayerMap = DEFAULT_LAYER_MAP) -> LayerId | None:
    normalize_path(path)
    hits = {layer for pattern, layer in layer_map.rules if glob_match(pattern, path)}
    if len(hits) > 1:
        raise AmbiguousLayer(f"{path!r} matches several layers: {sorted(h.value for h in hits)}")
    return hits.pop() if hits else None


@dataclass(frozen=True)
class Skill:
    name: str
    description: str
    playbook: str
    created: int = 0  # generation in which the skill first appeared

    @property
    def is_template(self) -> bool:
        return self.name == TEMPLATE_SKILL


_SKILL_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


def _decode(data: bytes) -> str:
    return data.decode("utf-8", errors="replace")


@dataclass(frozen=True)
class AgentScaffold:
    """Immutable snapshot of a scaffold tree.

    ``files`` maps relative paths to raw bytes; every text operation decodes
    lazily so snapshots and diffs stay bit-exact.
    """

    files: Mapping[str, bytes]
    layer_map: LayerMap = DEFAULT_LAYER_MAP
    skills: tuple[Skill, ...] = ()

    def text(self, path: str) -> str:
        return _decode(self.files[path])

    @property
    def skill_created(self) -> dict[str, int]:
        return {s.name: s.created for s in self.skills}

    def skill(self, name: str) -> Skill | None:
        for s in self.skills:
            if s.name == name:
                return s
        return None

    def write_to(self, root: Path) -> None:
        root.mkdir(parents=True, exist_ok=True)
        for rel, data in sorted(self.files.items()):
            target = root / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
        (root / SKILLS_DIR).mkdir(exist_ok=True)


def scaffold_from_files(
    files: Mapping[str, bytes],
    layer_map: LayerMap = DEFAULT_LAYER_MAP,
    skill_created: Mapping[str, int] | None = None,
    default_created: int = 0,
) -> AgentScaffold:
    """Build and validate a scaffold from an in-memory file map.

    Skills absent from ``skill_created`` are stamped with ``default_created``.
    """
    for rel in files:
        normalize_path(rel)
    for required in REQUIRED_FILES:
        if required not in files:
            raise MissingFile(required)
    skill_dirs: dict[str, set[str]] = {}
    for rel in files:
        parts = PurePosixPath(rel).parts
        if parts[0] == SKILLS_DIR and len(parts) >= 3:
            skill_dirs.setdefault(parts[1], set()).add("/".join(parts[2:]))
        elif parts[0] == SKILLS_DIR and len(parts) == 2:
            raise InvalidSkill(parts[1], "loose file directly under skills/")
    if TEMPLATE_SKILL not in skill_dirs:
        raise MissingFile(f"{SKILLS_DIR}/{TEMPLATE_SKILL}/{SKILL_PLAYBOOK}")
    created = dict(skill_created or {})
    skills = []
    for name in sorted(skill_dirs):
        if not _SKILL_NAME_RE.match(name):
            raise InvalidSkill(name, "name is not an identifier")
        members = skill_dirs[name]
        for needed in (SKILL_DESCRIPTION, SKILL_PLAYBOOK):
            if needed not in members:
                raise InvalidSkill(name, f"missing {needed}")
        base = f"{SKILLS_DIR}/{name}/"
        description = _decode(files[base + SKILL_DESCRIPTION]).strip()
        if not description:
            raise InvalidSkill(name, f"empty {SKILL_DESCRIPTION}")
        skills.append(
            Skill(
                name=name,
                description=description,
                playbook=_decode(files[base + SKILL_PLAYBOOK]),
                created=created.get(name, default_created),
            )
        )
    return AgentScaffold(files=dict(files), layer_map=layer_map, skills=tuple(skills))


def read_tree(root: Path) -> dict[str, bytes]:
    files: dict[str, bytes] = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and "__pycache__" not in p.parts:
            files[p.relative_to(root).as_posix()] = p.read_bytes()
    return files


def load_scaffold(
    root: Path | str,
    layer_map: LayerMap = DEFAULT_LAYER_MAP,
    skill_created: Mapping[str, int] | None = None,
) -> AgentScaffold:
    root = Path(root)
    if not root.is_dir():
        raise MissingFile(str(root))
    if not (root / SKILLS_DIR).is_dir():
        raise MissingFile(SKILLS_DIR + "/")
    return scaffold_from_files(read_tree(root), layer_map, skill_created)


def load_seed() -> AgentScaffold:
    return load_scaffold(SEED_DIR)


# -- diffs ---------------------------------------------------------------------


@dataclass(frozen=True)
class FileDiff:
    path: str
    kind: str  # "created" | "deleted" | "modified"
    text: str
    new_bytes: bytes | None = None  # set only when content is not UTF-8


@dataclass(frozen=True)
class ScaffoldDiff:
    files: dict[str, FileDiff] = field(default_factory=dict)
    layer_map: LayerMap = DEFAULT_LAYER_MAP

    def __bool__(self) -> bool:
        return bool(self.files)

    @property
    def paths(self) -> list[str]:
        return sorted(self.files)

    @property
    def text(self) -> str:
        return "".join(self.files[p].text for p in self.paths)

    def by_layer(self) -> dict[LayerId | None, list[str]]:
        groups: dict[LayerId | None, list[str]] = {}
        for p in self.paths:
            groups.setdefault(attribute_layer(p, self.layer_map), []).append(p)
        return groups

    def layers(self) -> set[LayerId]:
        return {layer for layer in self.by_layer() if layer is not None}


def _as_text(data: bytes) -> str | None:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError:
        return None


def diff_files(
    old: Mapping[str, bytes], new: Mapping[str, bytes], layer_map: LayerMap = DEFAULT_LAYER_MAP
) -> ScaffoldDiff:
    out: dict[str, FileDiff] = {}
    for path in sorted(set(old) | set(new)):
        a, b = old.get(path), new.get(path)
        if a == b:
            continue
        kind = "created" if a is None else "deleted" if b is None else "modified"
        ta = None if a is None else _as_text(a)
        tb = None if b is None else _as_text(b)
        if (a is not None and ta is None) or (b is not None and tb is None):
            text = f"Binary files a/{path} and b/{path} differ\n"
            out[path] = FileDiff(path, kind, text, new_bytes=b)
        else:
            out[path] = FileDiff(path, kind, unified_diff(ta, tb, path))
    return ScaffoldDiff(out, layer_map)


def diff_scaffold(parent: AgentScaffold, child: AgentScaffold) -> ScaffoldDiff:
    return diff_files(parent.files, child.files, parent.layer_map)


def apply_diff(files: Mapping[str, bytes], diff: ScaffoldDiff) -> dict[str, bytes]:
    """Replay a diff onto a file map; the inverse of :func:`diff_files`."""
    out = dict(files)
    for path, fd in diff.files.items():
        if fd.kind == "deleted":
            out.pop(path, None)
        elif fd.new_bytes is not None:
            out[path] = fd.new_bytes
        else:
            base = "" if fd.kind == "created" else out[path].decode("utf-8")
            out[path] = apply_unified(base, fd.text).encode("utf-8")
    return out


# -- skill menu ----------------------------------------------------------------


def select_skills(skills: Iterable[Skill], max_skills: int) -> list[Skill]:
    """Newest skills first, then by name; the template skill never appears."""
    pool = [s for s in skills if not s.is_template]
    pool.sort(key=lambda s: (-s.created, s.name))
    return pool[: max(max_skills, 0)]


def format_skills_context(skills: Iterable[Skill], max_skills: int = 4) -> str:
    lines = []
    for s in select_skills(skills, max_skills):
        description = " ".join(s.description.split())
        lines.append(f"- {s.name}: {description}")
    return "\n".join(lines)
