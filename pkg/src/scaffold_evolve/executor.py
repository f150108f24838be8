"""Command execution inside a per-episode scratch workspace."""

from __future__ import annotations

import contextlib
import os
import shutil
import signal
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Protocol

from .challenge import Challenge
from .errors import ExecutorError

TIMEOUT_RETURNCODE = 124


@dataclass(frozen=True)
class ExecutionResult:
    stdout: bytes
    stderr: bytes
    returncode: int
    timed_out: bool = False

    def __post_init__(self) -> None:
        if self.timed_out and self.returncode != TIMEOUT_RETURNCODE:
            raise ValueError("a timed-out result must carry returncode 124")


class Executor(Protocol):
    def workspace(self, challenge: Challenge) -> contextlib.AbstractContextManager[Path]: ...

    def run(self, command: str, cwd: Path, timeout: float) -> ExecutionResult: ...


class LocalExecutor:
    """Runs ``bash -c`` in a scratch copy of the challenge files.

    Not a security boundary; a container adapter can implement the same two
    methods when isolation is required.
    """

    def __init__(self, shell: str = "bash", env: Mapping[str, str] | None = None, strip_env: tuple[str, ...] = ()):
        self.shell = shell
        self.env = dict(env) if env is not None else None
        self.strip_env = strip_env

    @contextlib.contextmanager
    def workspace(self, challenge: Challenge) -> Iterator[Path]:
        root = Path(tempfile.mkdtemp(prefix=f"episode-{challenge.name}-"))
        try:
            if challenge.files is not None:
                shutil.copytree(challenge.files, root, dirs_exist_ok=True)
            yield root
        finally:
            shutil.rmtree(root, ignore_errors=True)

    def _environ(self) -> dict[str, str]:
        env = dict(os.environ if self.env is None else self.env)
        for key in self.strip_env:
            env.pop(key, None)
        return env

    def run(self, command: str, cwd: Path, timeout: float) -> ExecutionResult:
        try:
            proc = subprocess.Popen(
                [self.shell, "-c", command],
                cwd=cwd,
                stdin=subprocess.DEVNULL,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                env=self._environ(),
                start_new_session=True,
            )
        except OSError as exc:
            raise ExecutorError(f"cannot launch {self.shell}: {exc}") from exc
        try:
            out, err = proc.communicate(timeout=timeout)
        except subprocess.TimeoutExpired:
            with contextlib.suppress(ProcessLookupError):
                os.killpg(proc.pid, signal.SIGKILL)
            out, err = proc.communicate()
            return ExecutionResult(out, err, TIMEOUT_RETURNCODE, timed_out=True)
        return ExecutionResult(out, err, proc.returncode)
