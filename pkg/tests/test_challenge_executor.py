from __future__ import annotations

import sys

import pytest

from scaffold_evolve.challenge import (
    SUBMISSION_MARKER,
    Challenge,
    Verdict,
    load_challenge,
    submitted_token,
    verify_submission,
)
from scaffold_evolve.errors import ConfigError, VerifierFailure
from scaffold_evolve.executor import TIMEOUT_RETURNCODE, ExecutionResult, LocalExecutor

from conftest import TOY


def test_toy_challenge_loads(toy):
    assert toy.flag == "flag{toy_scaffold_evolved}"
    assert toy.step_budget == 30
    assert (toy.files / ".cache" / "deep" / "vault.dat").read_text().strip() == toy.flag


def test_exactly_one_verifier():
    with pytest.raises(ConfigError):
        Challenge("x", "p")
    with pytest.raises(ConfigError):
        Challenge("x", "p", flag="a", verify_command="true")


def test_unknown_challenge_key(tmp_path):
    (tmp_path / "challenge.toml").write_text('name="x"\nflavor=1\n[verifier]\nkind="flag"\nvalue="f"\n')
    with pytest.raises(ConfigError):
        load_challenge(tmp_path)


def test_flag_verdicts(toy):
    assert verify_submission(SUBMISSION_MARKER + toy.flag, toy) is Verdict.SOLVED
    assert verify_submission(SUBMISSION_MARKER + "flag{nope}", toy) is Verdict.INCORRECT
    assert verify_submission("total 0\n", toy) is Verdict.NOT_A_SUBMISSION


def test_last_marker_wins():
    assert submitted_token(f"{SUBMISSION_MARKER}a\nnoise\n{SUBMISSION_MARKER}b\n") == "b"


def test_command_verifier(tmp_path):
    script = tmp_path / "check.py"
    script.write_text("import sys; sys.exit(0 if sys.argv[1] == 'good' else 1)\n")
    ch = Challenge("c", "p", verify_command=f"{sys.executable} {script}")
    assert verify_submission(SUBMISSION_MARKER + "good", ch) is Verdict.SOLVED
    assert verify_submission(SUBMISSION_MARKER + "bad", ch) is Verdict.INCORRECT
    broken = Challenge("c", "p", verify_command="/nonexistent/verifier")
    with pytest.raises(VerifierFailure):
        verify_submission(SUBMISSION_MARKER + "x", broken)


def test_workspace_copies_files_and_cleans_up(toy):
    ex = LocalExecutor()
    with ex.workspace(toy) as cwd:
        res = ex.run("cat .cache/deep/vault.dat; echo err >&2; exit 3", cwd, 10)
        assert res.stdout.decode().strip() == toy.flag
        assert res.stderr == b"err\n" and res.returncode == 3
    assert not cwd.exists()


def test_timeout_maps_to_124(toy):
    ex = LocalExecutor()
    with ex.workspace(toy) as cwd:
        res = ex.run("sleep 5", cwd, 0.2)
    assert res.timed_out and res.returncode == TIMEOUT_RETURNCODE


def test_strip_env(toy, monkeypatch):
    monkeypatch.setenv("SECRET_TOKEN", "x")
    ex = LocalExecutor(strip_env=("SECRET_TOKEN",))
    with ex.workspace(toy) as cwd:
        assert ex.run("echo ${SECRET_TOKEN:-unset}", cwd, 5).stdout == b"unset\n"


def test_timed_out_requires_124():
    with pytest.raises(ValueError):
        ExecutionResult(b"", b"", 1, timed_out=True)
