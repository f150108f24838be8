"""One ReAct episode: render prompts, ask the model, run one bash action per turn."""

from __future__ import annotations

import re
import shlex
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from .backends import ChatRequest, ModelBackend, message
from .challenge import SUBMISSION_MARKER, Challenge, Verdict, scorer_message, verify_submission
from .errors import BackendFailure, DriverError, ExecutorError
from .executor import ExecutionResult, Executor
from .scaffold import (
    DRIVER_FILE,
    INSTANCE_TEMPLATE,
    OBSERVATION_TEMPLATE,
    PARSE_ERROR_TEMPLATE,
    SYSTEM_TEMPLATE,
    AgentScaffold,
    format_skills_context,
)
from .templating import render
from .trajectory import Status, StepRecord, Trajectory

DEFAULT_TIMEOUT = 120.0
DEFAULT_OBSERVATION_CAP = 64 * 1024
DEFAULT_ROLE = (
    "You are an autonomous security agent working inside a non-interactive Linux shell. "
    "Your goal is to capture the flag for the challenge described below."
)
DEFAULT_COMMAND_DOCS = (
    "- submit <flag>: hand a candidate flag to the scorer. The episode ends when it is accepted.\n"
    "- load_skill --name <skill_name>: print the full playbook of a skill listed in <SKILLS>."
)


@dataclass(frozen=True)
class RuntimeConfig:
    timeout: float = DEFAULT_TIMEOUT
    observation_cap: int = DEFAULT_OBSERVATION_CAP
    max_skills: int = 4
    role_and_env: str = DEFAULT_ROLE
    command_docs: str = DEFAULT_COMMAND_DOCS


# -- parsing -----------------------------------------------------------------


class ParseErrorKind(str, Enum):
    NO_BLOCK = "no_block"
    NO_REASONING = "no_reasoning"
    MULTIPLE_BLOCKS = "multiple_blocks"
    OTHER = "other"


@dataclass(frozen=True)
class ParseError:
    kind: ParseErrorKind
    count: int = 0

    # names the parse-error template reads
    @property
    def error(self) -> str:
        return self.kind.value

    @property
    def command_blocks_num(self) -> int:
        return self.count


@dataclass(frozen=True)
class ParsedAction:
    thought: str
    command: str


_BLOCK_RE = re.compile(r"```bash[ \t]*\n(.*?)\n?```", re.DOTALL)


def parse_bash_action(response: str) -> ParsedAction | ParseError:
    blocks = list(_BLOCK_RE.finditer(response))
    if not blocks:
        return ParseError(ParseErrorKind.NO_BLOCK)
    if len(blocks) > 1:
        return ParseError(ParseErrorKind.MULTIPLE_BLOCKS, len(blocks))
    block = blocks[0]
    thought = response[: block.start()].strip()
    if not thought:
        return ParseError(ParseErrorKind.NO_REASONING, 1)
    command = block.group(1)
    if not command.strip():
        return ParseError(ParseErrorKind.OTHER, 1)
    return ParsedAction(thought, command)


def render_action(thought: str, command: str) -> str:
    return f"{thought}\n\n```bash\n{command}\n```"


# -- driver ------------------------------------------------------------------


@dataclass(frozen=True)
class Driver:
    format_output: Callable[[str, str, int], str]
    submit_command: str


def load_driver(source: str) -> Driver:
    namespace: dict[str, Any] = {"__name__": "scaffold_driver"}
    try:
        exec(compile(source, DRIVER_FILE, "exec"), namespace)
    except Exception as exc:  # the driver is evolved code; any failure invalidates it
        raise DriverError(f"{DRIVER_FILE} failed to load: {exc!r}") from exc
    fmt = namespace.get("format_output")
    if not callable(fmt):
        raise DriverError(f"{DRIVER_FILE} does not define format_output")
    submit = namespace.get("SUBMIT_COMMAND", "submit")
    if not isinstance(submit, str) or not re.fullmatch(r"[A-Za-z_][\w-]*", submit):
        raise DriverError(f"{DRIVER_FILE} has an invalid SUBMIT_COMMAND")
    return Driver(fmt, submit)


# -- observations --------------------------------------------------------------


def truncate_payload(text: str, cap: int) -> str:
    """Keep the head of ``text`` within ``cap`` UTF-8 bytes, then a marker."""
    data = text.encode("utf-8")
    if len(data) <= cap:
        return text
    head = data[:cap].decode("utf-8", errors="ignore")
    return f"{head}\n[output truncated: showing {cap} of {len(data)} bytes]"


def render_observation(
    result: ExecutionResult,
    cwd: str | Path,
    scaffold: AgentScaffold,
    driver: Driver | None = None,
    cap: int = DEFAULT_OBSERVATION_CAP,
) -> str:
    stdout = result.stdout.decode("utf-8", errors="replace")
    stderr = result.stderr.decode("utf-8", errors="replace")
    if driver is None:
        driver = load_driver(scaffold.text(DRIVER_FILE))
    try:
        out = driver.format_output(stdout, stderr, result.returncode)
    except Exception as exc:
        raise DriverError(f"format_output raised {exc!r}") from exc
    if not isinstance(out, str):
        raise DriverError("format_output must return text")
    return render(
        scaffold.text(OBSERVATION_TEMPLATE),
        OBSERVATION_TEMPLATE,
        out=truncate_payload(out, cap),
        returncode=result.returncode,
        timed_out=result.timed_out,
        cwd=str(cwd),
    )


def render_parse_error(error: ParseError, scaffold: AgentScaffold) -> str:
    return render(scaffold.text(PARSE_ERROR_TEMPLATE), PARSE_ERROR_TEMPLATE, parse_result=error)


_LOAD_SKILL_RE = re.compile(r"\s*load_skill(?:\s+(.*))?\s*", re.DOTALL)


def handle_load_skill(command: str, scaffold: AgentScaffold, loaded: list[str] | None = None) -> str | None:
    """Serve ``load_skill --name X`` from the scaffold; ``None`` for anything else."""
    m = _LOAD_SKILL_RE.fullmatch(command)
    if not m:
        return None
    try:
        args = shlex.split(m.group(1) or "")
    except ValueError:
        args = []
    name = None
    if len(args) == 2 and args[0] == "--name":
        name = args[1]
    elif len(args) == 1 and args[0].startswith("--name="):
        name = args[0].split("=", 1)[1]
    if not name:
        return "Usage: load_skill --name <skill_name>"
    skill = scaffold.skill(name)
    if skill is None or skill.is_template:
        available = ", ".join(s.name for s in scaffold.skills if not s.is_template) or "none"
        return f"Unknown skill {name!r}. Available skills: {available}"
    if loaded is not None and name not in loaded:
        loaded.append(name)
    return skill.playbook


def parse_submission(command: str, submit_command: str = "submit") -> str | None:
    m = re.fullmatch(rf"\s*{re.escape(submit_command)}(?:[ \t]+([^\n]*))?\s*", command)
    if not m:
        return None
    token = (m.group(1) or "").strip()
    if len(token) >= 2 and token[0] == token[-1] and token[0] in "'\"":
        token = token[1:-1]
    return token


# -- episode -------------------------------------------------------------------


def initial_messages(scaffold: AgentScaffold, challenge: Challenge, config: RuntimeConfig) -> list[dict[str, str]]:
    system = render(
        scaffold.text(SYSTEM_TEMPLATE),
        SYSTEM_TEMPLATE,
        Role_and_Env=config.role_and_env,
        command_docs=config.command_docs,
        skill_descriptions=format_skills_context(scaffold.skills, config.max_skills),
    )
    instance = render(scaffold.text(INSTANCE_TEMPLATE), INSTANCE_TEMPLATE, MISSION_CONTEXT=challenge.prompt)
    return [message("system", system), message("user", instance)]


@dataclass
class _Turn:
    action: str | None = None
    observation: str = ""
    returncode: int | None = None
    timed_out: bool = False
    verdict: Verdict = Verdict.NOT_A_SUBMISSION


def run_episode(
    scaffold: AgentScaffold,
    challenge: Challenge,
    backend: ModelBackend,
    executor: Executor,
    config: RuntimeConfig = RuntimeConfig(),
    node_id: str = "episode",
) -> Trajectory:
    """Run at most ``challenge.step_budget`` turns; stop at the first accepted flag.

    Template and driver failures propagate: they mean the scaffold is broken.
    A backend failure ends the episode early with ``aborted`` set.
    """
    driver = load_driver(scaffold.text(DRIVER_FILE))
    history = initial_messages(scaffold, challenge, config)
    traj = Trajectory()
    with executor.workspace(challenge) as cwd:
        for i in range(1, challenge.step_budget + 1):
            request = ChatRequest("episode", node_id, tuple(history), {"step": i})
            try:
                response = backend.complete(request)
            except BackendFailure as exc:
                traj.aborted, traj.abort_reason = True, str(exc)
                break
            history.append(message("assistant", response))
            parsed = parse_bash_action(response)
            if isinstance(parsed, ParseError):
                thought = response.split("```", 1)[0].strip()
                turn = _Turn(observation=render_parse_error(parsed, scaffold))
            else:
                thought = parsed.thought
                turn = _step(parsed.command, scaffold, challenge, executor, cwd, driver, config, traj)
            traj.steps.append(
                StepRecord(i, thought, turn.action, turn.observation, turn.returncode, turn.timed_out)
            )
            if turn.verdict is Verdict.SOLVED:
                traj.status = Status.SOLVED
                break
            history.append(message("user", turn.observation))
    return traj


def _step(
    command: str,
    scaffold: AgentScaffold,
    challenge: Challenge,
    executor: Executor,
    cwd: Path,
    driver: Driver,
    config: RuntimeConfig,
    traj: Trajectory,
) -> _Turn:
    skill_text = handle_load_skill(command, scaffold, traj.loaded_skills)
    if skill_text is not None:
        return _Turn(command, skill_text, 0)
    token = parse_submission(command, driver.submit_command)
    if token is not None:
        # verified on the canonical marker line, not on the evolvable rendering
        verdict = verify_submission(SUBMISSION_MARKER + token, challenge)
        obs = render(
            scaffold.text(OBSERVATION_TEMPLATE),
            OBSERVATION_TEMPLATE,
            out=SUBMISSION_MARKER + token,
            returncode=0,
            timed_out=False,
            cwd=str(cwd),
        )
        if verdict is Verdict.INCORRECT:
            obs = obs.rstrip("\n") + "\n" + scorer_message(token) + "\n"
        return _Turn(command, obs, 0, verdict=verdict)
    try:
        result = executor.run(command, cwd, config.timeout)
    except ExecutorError as exc:
        result = ExecutionResult(b"", f"executor error: {exc}".encode(), 126)
    obs = render_observation(result, cwd, scaffold, driver, config.observation_cap)
    return _Turn(command, obs, result.returncode, result.timed_out)
