"""Exception hierarchy shared across the package."""

from __future__ import annotations


class EvolveError(Exception):
    """Base class for all package errors."""


# -- scaffold ----------------------------------------------------------------


class ScaffoldError(EvolveError):
    pass


class MalformedPath(ScaffoldError, ValueError):
    pass


class AmbiguousLayer(ScaffoldError):
    pass


class MissingFile(ScaffoldError):
    def __init__(self, path: str):
        super().__init__(f"required scaffold file missing: {path}")
        self.path = path


class InvalidSkill(ScaffoldError):
    def __init__(self, folder: str, reason: str):
        super().__init__(f"invalid skill folder {folder!r}: {reason}")
        self.folder = folder
        self.reason = reason


class TemplateError(EvolveError):
    def __init__(self, name: str, reason: str):
        super().__init__(f"template {name!r} failed: {reason}")
        self.name = name
        self.reason = reason


class DriverError(ScaffoldError):
    """The scaffold's driver source could not be loaded or lacks its hooks."""


# -- runtime -----------------------------------------------------------------


class BackendFailure(EvolveError):
    """A model call failed; callers degrade rather than abort the run."""


class ScriptExhausted(EvolveError):
    """A scripted backend received a request its script does not cover.

    Deliberately not a ``BackendFailure``: it signals drift between a test
    script and the code under test and must propagate.
    """

    def __init__(self, key: str):
        super().__init__(f"scripted backend has no response for {key}")
        self.key = key


class ExecutorError(EvolveError):
    pass


class VerifierFailure(EvolveError):
    pass


# -- summarizer / diagnosis ----------------------------------------------------


class MalformedLog(EvolveError):
    pass


class EmptyTrajectory(EvolveError):
    pass


class ScoreError(EvolveError):
    pass


class ScoreMissing(ScoreError):
    pass


class ScoreOutOfRange(ScoreError):
    def __init__(self, value: int):
        super().__init__(f"score {value} outside [0, 100]")
        self.value = value


class DiagnosisDisabled(EvolveError):
    """The selected prompt pack carries no diagnosis cards."""


# -- refiner / engine / config -------------------------------------------------


class ValidatorUnavailable(EvolveError):
    pass


class ConfigError(EvolveError):
    def __init__(self, key: str, reason: str):
        super().__init__(f"config key {key!r}: {reason}")
        self.key = key
        self.reason = reason


class FatalSetupError(EvolveError):
    pass


class EmptyTree(EvolveError):
    pass
