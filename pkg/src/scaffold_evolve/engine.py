"""Population beam search over scaffolds: execute, summarize, diagnose, select, mutate."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import tempfile
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator

from .backends import ROLES, CountingBackend, ModelBackend
from .challenge import Challenge
from .diagnosis import DiagnosisReport, diagnose, rank_siblings, render_diagnosis
from .errors import ConfigError, FatalSetupError, ScaffoldError, TemplateError
from .executor import Executor
from .persist import write_run
from .prompts import PromptPack
from .refiner import DEFAULT_THETA, ChildResult, MutationContext, mutate
from .refiner.apply import SafetyPolicy, validate_tree
from .refiner.phases import dry_run, report_text
from .runtime import RuntimeConfig, run_episode
from .scaffold import SYSTEM_TEMPLATE, AgentScaffold, ScaffoldDiff, diff_files, scaffold_from_files
from .summarizer import DEFAULT_BACKFILL_CAP, DEFAULT_WINDOW, TrajectorySummary, summarize_trajectory
from .trajectory import Status, Trajectory, render_log

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BeamConfig:
    generations: int = 3
    beam_width: int = 3
    children_per_parent: int = 3
    select_top: int = 2
    mutation_temperature: float = 1.0
    step_budget: int | None = 30
    rollout_budget_cap: int = 16
    window: int = DEFAULT_WINDOW
    backfill_cap: int = DEFAULT_BACKFILL_CAP
    theta: float = DEFAULT_THETA
    on_phase_failure: str = "revert"
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("beam_width", "children_per_parent", "select_top", "rollout_budget_cap", "window", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be at least 1")
        if self.generations < 0:
            raise ConfigError("generations", "must not be negative")
        if self.select_top > self.beam_width:
            raise ConfigError("select_top", "must not exceed beam_width")
        if self.step_budget is not None and self.step_budget < 1:
            raise ConfigError("step_budget", "must be at least 1")
        if self.backfill_cap < 0:
            raise ConfigError("backfill_cap", "must not be negative")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError("theta", "must lie in [0, 1]")
        if self.on_phase_failure not in ("revert", "discard"):
            raise ConfigError("on_phase_failure", "must be 'revert' or 'discard'")


class NodeStatus(str, Enum):
    PENDING = "Pending"
    EXECUTED = "Executed"
    SOLVED = "Solved"
    INVALID = "Invalid"
    PRUNED = "Pruned"


@dataclass
class EvolutionNode:
    id: str
    parent_id: str | None
    generation: int
    seq: int
    scaffold: AgentScaffold
    diff: ScaffoldDiff = field(default_factory=ScaffoldDiff)
    status: NodeStatus = NodeStatus.PENDING
    trajectory: Trajectory | None = None
    summary: TrajectorySummary | None = None
    report: DiagnosisReport | None = None
    score: int | None = None
    phases: list[dict[str, Any]] = field(default_factory=list)
    invalid_reason: str = ""
    timings: dict[str, float] = field(default_factory=dict)

    def index_entry(self) -> dict[str, Any]:
        """Deterministic description of the node; no timings or temp paths."""
        diff_text = self.diff.text
        return {
            "id": self.id,
            "parent": self.parent_id,
            "generation": self.generation,
            "seq": self.seq,
            "status": self.status.value,
            "score": self.score,
            "changed": {p: (layer.value if layer else None) for layer, paths in self.diff.by_layer().items() for p in paths},
            "diff_sha256": hashlib.sha256(diff_text.encode("utf-8")).hexdigest(),
            "trajectory": None
            if self.trajectory is None
            else {
                "status": self.trajectory.status.value,
                "steps": len(self.trajectory.steps),
                "aborted": self.trajectory.aborted,
                "loaded_skills": list(self.trajectory.loaded_skills),
            },
            "actions": [
                {"phase": ph["phase"], **{k: r[k] for k in ("kind", "path", "outcome")}}
                for ph in self.phases
                for r in ph["actions"]["results"]
            ],
            "invalid_reason": self.invalid_reason,
        }


@dataclass
class EvolutionTree:
    nodes: dict[str, EvolutionNode] = field(default_factory=dict)
    populations: list[list[str]] = field(default_factory=list)
    calls: dict[str, int] = field(default_factory=lambda: {r: 0 for r in ROLES})
    status: Status = Status.UNSOLVED

    def add(self, node: EvolutionNode) -> None:
        self.nodes[node.id] = node

    def children(self, node_id: str) -> list[EvolutionNode]:
        return sorted((n for n in self.nodes.values() if n.parent_id == node_id), key=lambda n: n.seq)

    def to_index(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "populations": self.populations,
            "accounting": accounting(self),
            "nodes": [n.index_entry() for n in sorted(self.nodes.values(), key=lambda n: n.seq)],
        }


def accounting(tree: EvolutionTree) -> dict[str, Any]:
    statuses = Counter(n.status.value for n in tree.nodes.values())
    return {
        "rollouts": sum(1 for n in tree.nodes.values() if n.trajectory is not None),
        "llm_calls_by_role": {r: int(tree.calls.get(r, 0)) for r in ROLES},
        "nodes_by_status": {s.value: statuses.get(s.value, 0) for s in NodeStatus},
    }


def select_parents(population: list[EvolutionNode], config: BeamConfig) -> list[EvolutionNode]:
    """TopK by score (creation order on ties), then the first ``select_top``."""
    eligible = [n for n in population if n.status is NodeStatus.EXECUTED]
    by_id = {n.id: n for n in eligible}
    ranked = rank_siblings([(n.id, n.score) for n in sorted(eligible, key=lambda n: n.seq)])
    keep = min(len(ranked), config.beam_width, config.select_top)
    return [by_id[i] for i in ranked[:keep]]


@dataclass
class EvolutionResult:
    status: Status
    tree: EvolutionTree
    run_dir: Path | None = None


class _Run:
    def __init__(
        self,
        seed: AgentScaffold,
        challenge: Challenge,
        config: BeamConfig,
        backend: ModelBackend,
        executor: Executor,
        pack: PromptPack,
        runtime: RuntimeConfig,
        policy: SafetyPolicy,
    ):
        self.seed = seed
        self.challenge = challenge if config.step_budget is None else dataclasses.replace(
            challenge, step_budget=config.step_budget
        )
        self.config = config
        self.backend = CountingBackend(backend)
        self.executor = executor
        self.pack = pack
        self.runtime = runtime
        self.policy = policy
        self.tree = EvolutionTree()
        self.rollouts = 0
        self.seq = 0

    def new_node(self, node_id: str, parent: EvolutionNode | None, scaffold: AgentScaffold) -> EvolutionNode:
        node = EvolutionNode(
            id=node_id,
            parent_id=None if parent is None else parent.id,
            generation=0 if parent is None else parent.generation + 1,
            seq=self.seq,
            scaffold=scaffold,
        )
        self.seq += 1
        self.tree.add(node)
        return node

    def rollout(self, node: EvolutionNode) -> None:
        t0 = time.perf_counter()
        try:
            node.trajectory = run_episode(
                node.scaffold, self.challenge, self.backend, self.executor, self.runtime, node.id
            )
        except (ScaffoldError, TemplateError) as exc:
            # a scaffold that cannot render or load is invalid, not a crash
            node.trajectory = Trajectory(aborted=True, abort_reason=f"{type(exc).__name__}: {exc}")
            node.status = NodeStatus.INVALID
            node.invalid_reason = node.trajectory.abort_reason
        else:
            node.status = NodeStatus.SOLVED if node.trajectory.status is Status.SOLVED else NodeStatus.EXECUTED
        self.rollouts += 1
        node.timings["rollout"] = time.perf_counter() - t0

    def analyse(self, node: EvolutionNode) -> None:
        t0 = time.perf_counter()
        assert node.trajectory is not None
        if node.trajectory.steps:
            node.summary = summarize_trajectory(
                render_log(node.trajectory.steps),
                self.backend,
                self.pack,
                self.config.window,
                self.config.backfill_cap,
                node.id,
                self.config.workers,
            )
        else:
            node.summary = TrajectorySummary(())
        node.timings["summarize"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        if self.pack.diagnosis_enabled:
            node.report = diagnose(node.summary, self.challenge, self.pack, self.backend, node.id)
        else:
            node.report = DiagnosisReport(score=0)
        node.score = node.report.effective_score
        node.timings["diagnose"] = time.perf_counter() - t0

    def context_for(self, node: EvolutionNode) -> MutationContext:
        gp_report = None
        if node.parent_id is not None:
            gp = self.tree.nodes[node.parent_id]
            gp_report = (gp.id, report_text(_summary_text(gp), _report_text(gp)))
        return MutationContext(
            summary=_summary_text(node),
            diagnosis=_report_text(node),
            node_id=node.id,
            parent_patch=node.diff if node.parent_id is not None else None,
            grandparent_report=gp_report,
            gen0_system_template=self.seed.text(SYSTEM_TEMPLATE),
        )

    def expand(self, parent: EvolutionNode) -> list[EvolutionNode]:
        t0 = time.perf_counter()
        ids = [f"{parent.id}.{j}" for j in range(self.config.children_per_parent)]
        results = mutate(
            parent.scaffold,
            self.context_for(parent),
            self.backend,
            self.pack,
            ids,
            fan_out=self.config.workers,
            holistic=self.pack.holistic,
            on_phase_failure=self.config.on_phase_failure,
            theta=self.config.theta,
            policy=self.policy,
        )
        elapsed = (time.perf_counter() - t0) / max(len(results), 1)
        return [self.adopt(parent, r, elapsed) for r in results]

    def adopt(self, parent: EvolutionNode, child: ChildResult, elapsed: float) -> EvolutionNode:
        scaffold = parent.scaffold
        reason = child.reason
        if child.valid:
            try:
                scaffold = scaffold_from_files(
                    child.files, parent.scaffold.layer_map, parent.scaffold.skill_created, parent.generation + 1
                )
            except ScaffoldError as exc:
                reason = str(exc)
        node = self.new_node(child.child_id, parent, scaffold)
        node.diff = diff_files(parent.scaffold.files, child.files, parent.scaffold.layer_map)
        node.phases = [p.to_dict() for p in child.phases]
        node.timings["mutate"] = elapsed
        if not child.valid or reason:
            node.status = NodeStatus.INVALID
            node.invalid_reason = reason
        return node

    def run(self) -> Status:
        cfg = self.config
        root = self.new_node("0", None, self.seed)
        population = [root]
        for gen in range(cfg.generations + 1):
            self.tree.populations.append([n.id for n in population])
            for node in population:
                if self.rollouts >= cfg.rollout_budget_cap:
                    node.status = NodeStatus.PRUNED
                    continue
                self.rollout(node)
                if node.status is NodeStatus.SOLVED:
                    return Status.SOLVED
            if gen == cfg.generations or self.rollouts >= cfg.rollout_budget_cap:
                break
            executed = [n for n in population if n.status is NodeStatus.EXECUTED]
            for node in executed:
                self.analyse(node)
            children: list[EvolutionNode] = []
            for parent in select_parents(executed, cfg):
                children.extend(c for c in self.expand(parent) if c.status is NodeStatus.PENDING)
            if not children:
                log.info("generation %d produced no valid children; stopping", gen + 1)
                break
            population = children
        return Status.UNSOLVED


def _summary_text(node: EvolutionNode) -> str:
    return node.summary.render() if node.summary is not None else ""


def _report_text(node: EvolutionNode) -> str:
    if node.report is None:
        return ""
    return node.report.raw or (render_diagnosis(node.report) if node.report.score_error is None else "")


def evolve(
    seed: AgentScaffold,
    challenge: Challenge,
    config: BeamConfig,
    backend: ModelBackend,
    executor: Executor,
    pack: PromptPack,
    runtime: RuntimeConfig = RuntimeConfig(),
    policy: SafetyPolicy = SafetyPolicy(),
    run_dir: Path | None = None,
) -> EvolutionResult:
    """Run the search; the tree is persisted to ``run_dir`` whatever the outcome."""
    setup_errors = dry_run(seed.files, seed.layer_map)
    if not setup_errors:
        with _tree_copy(seed) as root:
            setup_errors = validate_tree(root)
    if setup_errors:
        raise FatalSetupError("; ".join(f"{e.path}: {e.reason}" for e in setup_errors))
    run = _Run(seed, challenge, config, backend, executor, pack, runtime, policy)
    try:
        run.tree.status = run.run()
    finally:
        run.tree.calls = run.backend.snapshot()
        if run_dir is not None:
            write_run(run_dir, run.tree, config, run.backend, extra={"challenge": challenge.name, "pack": pack.pack_id})
    return EvolutionResult(run.tree.status, run.tree, run_dir)


@contextmanager
def _tree_copy(scaffold: AgentScaffold) -> Iterator[Path]:
    with tempfile.TemporaryDirectory(prefix="seed-check-") as tmp:
        scaffold.write_to(Path(tmp))
        yield Path(tmp)
