"""Command-line entry point: ``scaffold-evolve <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .analysis import format_report
from .backends import ModelBackend, ScriptedBackend
from .challenge import load_challenge
from .config import load_config, parse_config
from .diagnosis import diagnose
from .engine import evolve
from .errors import ConfigError, EvolveError
from .executor import LocalExecutor
from .persist import dump_json, load_run
from .prompts import load_pack
from .refiner import DEFAULT_THETA, apply_actions, parse_patches
from .runtime import RuntimeConfig, run_episode
from .scaffold import DEFAULT_LAYER_MAP, LayerId, load_scaffold, load_seed
from .summarizer import DEFAULT_BACKFILL_CAP, DEFAULT_WINDOW, parse_steps, summarize_trajectory
from .trajectory import Status, render_log

EXIT_SOLVED = 0
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_UNSOLVED = 3


def _backend(args: argparse.Namespace) -> ModelBackend:
    if getattr(args, "script", None):
        return ScriptedBackend.from_file(args.script)
    if getattr(args, "config", None):
        return load_config(args.config).backend.build()
    raise ConfigError("backend", "pass --script FILE or --config FILE")


def _scaffold(path: str | None):
    return load_seed() if path in (None, "seed") else load_scaffold(path)


def cmd_evolve(args: argparse.Namespace) -> int:
    if args.config:
        cfg = load_config(args.config)
    else:
        if not args.challenge:
            raise ConfigError("challenge", "pass --config FILE or --challenge DIR")
        if not args.script:
            raise ConfigError("backend.script", "pass --script FILE without --config")
        cfg = parse_config(
            {"challenge": args.challenge, "backend": {"kind": "scripted", "script": args.script}},
            Path.cwd(),
        )
    overrides = {k: v for k, v in (("run_id", args.run_id), ("pack", args.pack)) if v}
    if args.out:
        overrides["output_dir"] = Path(args.out).resolve()
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    pack = load_pack(cfg.pack)
    backend = ScriptedBackend.from_file(args.script) if args.script and args.config else cfg.backend.build()
    seed = load_seed() if cfg.scaffold is None else load_scaffold(cfg.scaffold)
    result = evolve(
        seed,
        load_challenge(cfg.challenge),
        cfg.beam,
        backend,
        cfg.build_executor(),
        pack,
        runtime=cfg.runtime,
        run_dir=cfg.run_dir,
    )
    acc = result.tree.to_index()["accounting"]
    print(f"{result.status.value}\trollouts={acc['rollouts']}\trun_dir={cfg.run_dir}")
    return EXIT_SOLVED if result.status is Status.SOLVED else EXIT_UNSOLVED


def cmd_rollout(args: argparse.Namespace) -> int:
    challenge = load_challenge(args.challenge)
    if args.steps is not None:
        if args.steps < 1:
            raise ConfigError("steps", "must be at least 1")
        challenge = dataclasses.replace(challenge, step_budget=args.steps)
    traj = run_episode(_scaffold(args.scaffold), challenge, _backend(args), LocalExecutor(), RuntimeConfig(), "0")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trajectory.log").write_text(render_log(traj.steps), encoding="utf-8")
        (out / "trajectory.json").write_text(traj.to_json(), encoding="utf-8")
    else:
        sys.stdout.write(render_log(traj.steps))
    print(f"{traj.status.value}\tsteps={len(traj.steps)}", file=sys.stderr)
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    log_text = Path(args.log).read_text(encoding="utf-8")
    parse_steps(log_text)  # surface MalformedLog before any backend call
    summary = summarize_trajectory(
        log_text, _backend(args), load_pack(args.pack), args.window, args.backfill_cap, "0"
    )
    sys.stdout.write(summary.render())
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace) -> int:
    from .summarizer import SummaryStep, TrajectorySummary
    from .trajectory import parse_framed

    text = Path(args.summary).read_text(encoding="utf-8")
    blocks = parse_framed(text)
    summary = TrajectorySummary(
        tuple(SummaryStep(b.index, b.fields.get("THOUGHT", ""), b.fields.get("OBSERVATION", "")) for b in blocks)
    )
    report = diagnose(summary, load_challenge(args.challenge), load_pack(args.pack), _backend(args), "0")
    if args.json:
        sys.stdout.write(dump_json(report.sidecar()))
    else:
        sys.stdout.write(report.raw if report.raw.endswith("\n") or not report.raw else report.raw + "\n")
    print(f"score={report.effective_score}", file=sys.stderr)
    return EXIT_OK


def cmd_patch_apply(args: argparse.Namespace) -> int:
    root = Path(args.tree)
    if not root.is_dir():
        raise ConfigError("tree", f"{root} is not a directory")
    phase = None if args.phase == "any" else LayerId(args.phase)
    parsed = parse_patches(Path(args.actions).read_text(encoding="utf-8"))
    report = apply_actions(root, parsed.actions, phase, args.theta, DEFAULT_LAYER_MAP)
    report.notes.extend(parsed.notes)
    sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    sep = {"tab": "\t", "comma": ",", "pipe": "|"}[args.sep]
    sys.stdout.write(format_report(load_run(args.run_dir), sep=sep))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scaffold-evolve", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def backend_opts(p: argparse.ArgumentParser) -> None:
        p.add_argument("--script", help="scripted backend transcript (YAML or JSON)")
        p.add_argument("--config", help="TOML run config whose [backend] table is used")

    p = sub.add_parser("evolve", help="run the full evolution loop")
    p.add_argument("--config", help="TOML run config")
    p.add_argument("--challenge", help="challenge directory (when no --config)")
    p.add_argument("--script", help="scripted backend transcript; overrides the config backend")
    p.add_argument("--pack", help="prompt pack id or path")
    p.add_argument("--out", help="output directory for runs")
    p.add_argument("--run-id", help="run directory name")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("rollout", help="run one episode")
    p.add_argument("--challenge", required=True)
    p.add_argument("--scaffold", default="seed")
    p.add_argument("--steps", type=int)
    p.add_argument("--out", help="directory for trajectory.log and trajectory.json")
    backend_opts(p)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("summarize", help="summarize a step-framed trajectory log")
    p.add_argument("log")
    p.add_argument("--pack", default="default")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--backfill-cap", type=int, default=DEFAULT_BACKFILL_CAP)
    backend_opts(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("diagnose", help="diagnose a trajectory summary")
    p.add_argument("summary")
    p.add_argument("--challenge", required=True)
    p.add_argument("--pack", default="default")
    p.add_argument("--json", action="store_true", help="print the structured sidecar instead of the report")
    backend_opts(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("patch", help="patch operations")
    patch_sub = p.add_subparsers(dest="patch_command", required=True)
    pa = patch_sub.add_parser("apply", help="apply refiner actions to a scaffold tree in place")
    pa.add_argument("tree")
    pa.add_argument("actions", help="file holding <replace_code>/<create_file>/<delete_file> actions")
    pa.add_argument("--phase", default="any", choices=["any", *(layer.value for layer in LayerId)])
    pa.add_argument("--theta", type=float, default=DEFAULT_THETA)
    pa.set_defaults(func=cmd_patch_apply)

    p = sub.add_parser("analyze", help="tree metrics for a run directory")
    p.add_argument("run_dir")
    p.add_argument("--sep", choices=["tab", "comma", "pipe"], default="tab")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except EvolveError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
