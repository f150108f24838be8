"""Prompt packs: named Jinja templates for every model-facing role."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError, DiagnosisDisabled
from .templating import render

PACK_DIR = Path(__file__).parent / "packs"
PACK_IDS = ("default", "ablation-holistic", "ablation-no-diagnosis")

SUMMARIZER_SYSTEM = "system_prompt_thought_obs_summarizer_chunk"
SUMMARIZER_USER = "user_prompt_thought_obs_summarizer_chunk"
EUREKA_SYSTEM = "system_prompt_eureka"
EUREKA_USER = "user_prompt_eureka"
REFINER_SYSTEM = "system_prompt_coderefiner"
REFINER_USER = "user_prompt_coderefiner"
HOLISTIC_CARD = "user_prompt_coderefiner_holistic"
PHASE_CARDS = tuple(f"user_prompt_coderefiner_phase_{i}" for i in range(1, 5))

_META_KEYS = {"pack_id", "extends", "omit"}


@dataclass(frozen=True)
class PromptPack:
    pack_id: str
    templates: Mapping[str, str]

    def has(self, name: str) -> bool:
        return name in self.templates

    def render(self, name: str, **context: Any) -> str:
        if name not in self.templates:
            raise KeyError(f"prompt pack {self.pack_id!r} has no template {name!r}")
        return render(self.templates[name], f"{self.pack_id}:{name}", **context)

    @property
    def diagnosis_enabled(self) -> bool:
        return self.has(EUREKA_SYSTEM) and self.has(EUREKA_USER)

    @property
    def holistic(self) -> bool:
        return self.has(HOLISTIC_CARD) and not any(self.has(c) for c in PHASE_CARDS)

    def require_diagnosis(self) -> None:
        if not self.diagnosis_enabled:
            raise DiagnosisDisabled(f"prompt pack {self.pack_id!r} has no diagnosis cards")


def _read(path: Path) -> dict[str, Any]:
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError("prompt_pack", f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("prompt_pack", f"{path} is not a mapping")
    return data


def load_pack(name_or_path: str | Path, _seen: tuple[str, ...] = ()) -> PromptPack:
    """Load a shipped pack by id, or a pack file by path.

    A pack may ``extends`` another pack and ``omit`` inherited templates;
    its own templates override inherited ones.
    """
    path = Path(name_or_path)
    if str(name_or_path) in PACK_IDS or not path.suffix:
        path = PACK_DIR / f"{name_or_path}.yaml"
    if not path.is_file():
        raise ConfigError("prompt_pack", f"unknown pack {name_or_path!r}")
    data = _read(path)
    pack_id = str(data.get("pack_id", path.stem))
    if pack_id in _seen:
        raise ConfigError("prompt_pack", f"circular extends through {pack_id!r}")
    templates: dict[str, str] = {}
    if "extends" in data:
        base = load_pack(str(data["extends"]), _seen + (pack_id,))
        templates.update(base.templates)
    for name in data.get("omit") or []:
        templates.pop(name, None)
    for key, value in data.items():
        if key in _META_KEYS:
            continue
        if not isinstance(value, str):
            raise ConfigError("prompt_pack", f"template {key!r} in {path} is not text")
        templates[key] = value
    return PromptPack(pack_id, templates)
