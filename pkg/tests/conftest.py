from __future__ import annotations

from pathlib import Path

import pytest

from scaffold_evolve.backends import ScriptedBackend, ScriptRule
from scaffold_evolve.challenge import Challenge, load_challenge
from scaffold_evolve.scaffold import load_seed

DATA = Path(__file__).resolve().parents[1] / "src" / "scaffold_evolve" / "data"
TOY = DATA / "challenges" / "toy"
SCRIPTS = DATA / "scripts"
REFERENCE = Path(__file__).resolve().parents[1] / "paper.md"


def act(command: str, thought: str = "Next step.") -> str:
    return f"{thought}\n\n```bash\n{command}\n```"


def rules(*items: dict) -> ScriptedBackend:
    return ScriptedBackend([ScriptRule(**item) for item in items])


@pytest.fixture
def seed():
    return load_seed()


@pytest.fixture
def toy() -> Challenge:
    return load_challenge(TOY)


@pytest.fixture
def reference_text() -> str:
    if not REFERENCE.is_file():
        pytest.skip("reference text not present")
    return REFERENCE.read_text(encoding="utf-8")


# -- acceptance reporting ---------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
