"""Run directory layout: one folder per node plus a deterministic tree index."""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import TYPE_CHECKING, Any, Mapping

from .backends import ROLES, CountingBackend
from .errors import ConfigError
from .trajectory import render_log

if TYPE_CHECKING:
    from .engine import BeamConfig, EvolutionNode, EvolutionTree

TREE_FILE = "tree.json"
CONFIG_FILE = "config.json"
NODES_DIR = "nodes"


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def tree_json(tree: EvolutionTree) -> str:
    """The index is free of timings and temp paths, so equal runs give equal bytes."""
    return dump_json(tree.to_index())


def write_node(root: Path, node: EvolutionNode, backend: CountingBackend | None = None) -> Path:
    out = root / NODES_DIR / node.id
    out.mkdir(parents=True, exist_ok=True)
    node.scaffold.write_to(out / "scaffold")
    (out / "patch.diff").write_text(node.diff.text, encoding="utf-8")
    (out / "apply_report.json").write_text(dump_json(node.phases), encoding="utf-8")
    if node.trajectory is not None:
        (out / "trajectory.log").write_text(render_log(node.trajectory.steps), encoding="utf-8")
        (out / "trajectory.json").write_text(node.trajectory.to_json(), encoding="utf-8")
    if node.summary is not None:
        (out / "summary.txt").write_text(node.summary.render(), encoding="utf-8")
    if node.report is not None:
        (out / "diagnosis.txt").write_text(node.report.raw, encoding="utf-8")
        (out / "diagnosis.json").write_text(dump_json(node.report.sidecar()), encoding="utf-8")
    calls = {}
    if backend is not None:
        calls = {r: backend.calls_by_node.get((node.id, r), 0) for r in ROLES}
    meta = {
        "id": node.id,
        "parent": node.parent_id,
        "generation": node.generation,
        "status": node.status.value,
        "score": node.score,
        "invalid_reason": node.invalid_reason,
        "timings": {k: round(v, 6) for k, v in node.timings.items()},
        "llm_calls": calls,
    }
    (out / "meta.json").write_text(dump_json(meta), encoding="utf-8")
    return out


def write_run(
    root: Path,
    tree: EvolutionTree,
    config: BeamConfig,
    backend: CountingBackend | None = None,
    extra: Mapping[str, Any] | None = None,
) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / CONFIG_FILE).write_text(dump_json({**dataclasses.asdict(config), **(extra or {})}), encoding="utf-8")
    for node in tree.nodes.values():
        write_node(root, node, backend)
    (root / TREE_FILE).write_text(tree_json(tree), encoding="utf-8")


@dataclasses.dataclass
class RunRecord:
    """A persisted run as analysis sees it: the index plus per-node diff text."""

    index: dict[str, Any]
    diffs: dict[str, str]
    reports: dict[str, list[dict[str, Any]]]

    @property
    def nodes(self) -> list[dict[str, Any]]:
        return self.index["nodes"]


def load_run(root: str | Path) -> RunRecord:
    root = Path(root)
    index_path = root / TREE_FILE
    if not index_path.is_file():
        raise ConfigError("run_dir", f"{root} has no {TREE_FILE}")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    diffs: dict[str, str] = {}
    reports: dict[str, list[dict[str, Any]]] = {}
    for node in index["nodes"]:
        folder = root / NODES_DIR / node["id"]
        patch = folder / "patch.diff"
        diffs[node["id"]] = patch.read_text(encoding="utf-8") if patch.is_file() else ""
        rep = folder / "apply_report.json"
        reports[node["id"]] = json.loads(rep.read_text(encoding="utf-8")) if rep.is_file() else []
    return RunRecord(index, diffs, reports)
