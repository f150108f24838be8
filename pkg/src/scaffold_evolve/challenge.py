"""Challenge packages and submission verification."""

from __future__ import annotations

import shlex
import subprocess
import sys
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, VerifierFailure

METADATA_FILE = "challenge.toml"
FILES_DIR = "files"
DEFAULT_STEP_BUDGET = 30

# Printed by the runtime when the agent issues a submission; never produced
# by the executor, so only genuine submissions reach the verifier.
SUBMISSION_MARKER = "[submission] "


@dataclass(frozen=True)
class Challenge:
    name: str
    prompt: str
    files: Path | None = None
    flag: str | None = None
    verify_command: str | None = None
    step_budget: int = DEFAULT_STEP_BUDGET

    def __post_init__(self) -> None:
        if (self.flag is None) == (self.verify_command is None):
            raise ConfigError("verifier", "exactly one of flag / command must be set")
        if self.step_budget < 1:
            raise ConfigError("step_budget", "must be at least 1")


def load_challenge(root: str | Path) -> Challenge:
    """Read ``challenge.toml`` plus the optional ``files/`` directory.

    ``[verifier]`` takes ``kind = "flag" | "command"`` and ``value``.
    """
    root = Path(root)
    meta = root / METADATA_FILE
    try:
        data = tomllib.loads(meta.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("challenge", f"cannot read {meta}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("challenge", f"{meta}: {exc}") from exc
    allowed = {"name", "prompt", "step_budget", "verifier"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown challenge key")
    verifier: dict[str, Any] = data.get("verifier") or {}
    kind, value = verifier.get("kind"), verifier.get("value")
    if kind not in ("flag", "command") or not isinstance(value, str):
        raise ConfigError("verifier", "need kind = 'flag' | 'command' and a string value")
    files = root / FILES_DIR
    return Challenge(
        name=str(data.get("name", root.name)),
        prompt=str(data.get("prompt", "")),
        files=files if files.is_dir() else None,
        flag=value if kind == "flag" else None,
        verify_command=value if kind == "command" else None,
        step_budget=int(data.get("step_budget", DEFAULT_STEP_BUDGET)),
    )


class Verdict(Enum):
    SOLVED = "Solved"
    INCORRECT = "Incorrect"
    NOT_A_SUBMISSION = "NotASubmission"


def submitted_token(observation: str) -> str | None:
    token = None
    for line in observation.splitlines():
        if line.startswith(SUBMISSION_MARKER):
            token = line[len(SUBMISSION_MARKER):]
    return token


def scorer_message(token: str) -> str:
    return f"Incorrect submission: {token!r} was rejected by the scorer."


def verify_submission(observation: str, challenge: Challenge, timeout: float = 60.0) -> Verdict:
    token = submitted_token(observation)
    if token is None:
        return Verdict.NOT_A_SUBMISSION
    if challenge.flag is not None:
        ok = token.encode("utf-8") == challenge.flag.encode("utf-8")
        return Verdict.SOLVED if ok else Verdict.INCORRECT
    argv = shlex.split(challenge.verify_command or "") + [token]
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout, check=False)
    except (OSError, ValueError, subprocess.TimeoutExpired) as exc:
        raise VerifierFailure(f"cannot run verifier {argv[0]!r}: {exc}") from exc
    return Verdict.SOLVED if proc.returncode == 0 else Verdict.INCORRECT
