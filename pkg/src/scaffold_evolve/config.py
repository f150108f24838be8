"""TOML run configuration with strict keys and defaults matching the 16-rollout setup."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends import ROLES, HttpChatBackend, HttpSettings, ModelBackend, ScriptedBackend
from .engine import BeamConfig
from .errors import ConfigError
from .executor import Executor, LocalExecutor
from .prompts import load_pack
from .runtime import RuntimeConfig

SEED_SCAFFOLD = "seed"
EXECUTOR_KINDS = ("local",)
BACKEND_KINDS = ("scripted", "http-chat")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "scripted"
    script: Path | None = None
    base_url: str = ""
    model: str = ""
    api_key_env: str = "SCAFFOLD_EVOLVE_API_KEY"
    temperature: Mapping[str, float] = field(default_factory=lambda: {"refiner": 1.0})
    max_tokens: int = 10240
    max_attempts: int = 4
    backoff: float = 1.0
    timeout: float = 600.0

    def build(self) -> ModelBackend:
        # Scripted replies ignore sampling settings; they are kept for the record only.
        if self.kind == "scripted":
            if self.script is None:
                raise ConfigError("backend.script", "required for the scripted backend")
            return ScriptedBackend.from_file(self.script)
        settings = HttpSettings(
            base_url=self.base_url,
            model=self.model,
            api_key_env=self.api_key_env,
            temperature=dict(self.temperature),
            max_tokens=self.max_tokens,
            max_attempts=self.max_attempts,
            backoff=self.backoff,
            timeout=self.timeout,
        )
        return HttpChatBackend(settings)


@dataclass(frozen=True)
class RunConfig:
    challenge: Path
    scaffold: Path | None = None  # None: the packaged seed scaffold
    beam: BeamConfig = BeamConfig()
    runtime: RuntimeConfig = RuntimeConfig()
    backend: BackendConfig = BackendConfig()
    pack: str = "default"
    executor: str = "local"
    workers: int = 1
    output_dir: Path = Path("runs")
    run_id: str = "run"

    @property
    def run_dir(self) -> Path:
        return self.output_dir / self.run_id

    def build_executor(self) -> Executor:
        return LocalExecutor()


_TOP_KEYS = {"challenge", "scaffold", "pack", "executor", "workers", "output_dir", "run_id", "beam", "runtime", "backend"}
_BACKEND_PATH_KEYS = {"script"}


def _check_type(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {type(default).__name__}, got {type(value).__name__}")
    return value


def _fill(cls: type, section: str, data: Any, base: Path, path_keys: set[str] = set()) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(section, "must be a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    instance_defaults = cls()
    values: dict[str, Any] = {}
    for key, value in data.items():
        name = f"{section}.{key}"
        if key not in fields:
            raise ConfigError(name, "unknown key")
        if key in path_keys:
            if not isinstance(value, str):
                raise ConfigError(name, "expected a path string")
            values[key] = _existing(base, value, name)
        elif key == "temperature":
            if not isinstance(value, dict) or any(r not in ROLES for r in value):
                raise ConfigError(name, f"must map roles {', '.join(ROLES)} to numbers")
            values[key] = {r: float(_check_type(f"{name}.{r}", v, 1.0)) for r, v in value.items()}
        else:
            default = getattr(instance_defaults, key)
            values[key] = _check_type(name, value, default if default is not None else 0)
    try:
        return cls(**values)
    except ConfigError as exc:
        raise ConfigError(f"{section}.{exc.key}", exc.reason) from None


def _existing(base: Path, value: str, key: str) -> Path:
    path = (base / value).resolve()
    if not path.exists():
        raise ConfigError(key, f"path {path} does not exist")
    return path


def parse_config(data: Mapping[str, Any], base: Path = Path(".")) -> RunConfig:
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(key, "unknown key")
    if "challenge" not in data or not isinstance(data["challenge"], str):
        raise ConfigError("challenge", "a challenge directory is required")
    challenge = _existing(base, data["challenge"], "challenge")
    scaffold_value = data.get("scaffold", SEED_SCAFFOLD)
    if not isinstance(scaffold_value, str):
        raise ConfigError("scaffold", "expected a path string")
    scaffold = None if scaffold_value == SEED_SCAFFOLD else _existing(base, scaffold_value, "scaffold")
    workers = _check_type("workers", data.get("workers", 1), 1)
    if workers < 1:
        raise ConfigError("workers", "must be at least 1")
    beam = _fill(BeamConfig, "beam", data.get("beam", {}), base)
    beam = dataclasses.replace(beam, workers=workers)
    runtime = _fill(RuntimeConfig, "runtime", data.get("runtime", {}), base)
    backend = _fill(BackendConfig, "backend", data.get("backend", {}), base, _BACKEND_PATH_KEYS)
    if backend.kind not in BACKEND_KINDS:
        raise ConfigError("backend.kind", f"must be one of {', '.join(BACKEND_KINDS)}")
    if backend.kind == "http-chat" and not (backend.base_url and backend.model):
        raise ConfigError("backend", "http-chat needs base_url and model")
    pack = _check_type("pack", data.get("pack", "default"), "")
    load_pack(pack)  # fail early on an unknown pack
    executor = _check_type("executor", data.get("executor", "local"), "")
    if executor not in EXECUTOR_KINDS:
        raise ConfigError("executor", f"must be one of {', '.join(EXECUTOR_KINDS)}")
    output_dir = base / _check_type("output_dir", data.get("output_dir", "runs"), "")
    run_id = _check_type("run_id", data.get("run_id", "run"), "")
    if not run_id or "/" in run_id or run_id in (".", ".."):
        raise ConfigError("run_id", "must be a plain directory name")
    return RunConfig(
        challenge=challenge,
        scaffold=scaffold,
        beam=beam,
        runtime=runtime,
        backend=backend,
        pack=pack,
        executor=executor,
        workers=workers,
        output_dir=output_dir.resolve(),
        run_id=run_id,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("<file>", f"{path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}") from None
    return parse_config(data, path.parent)
