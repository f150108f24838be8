"""Patch parsing, application and layer-wise mutation."""

from .apply import (
    DEFAULT_THETA,
    ActionResult,
    ApplyReport,
    FuzzyMatch,
    Outcome,
    SafetyPolicy,
    ValidationError,
    apply_actions,
    fingerprint,
    fuzzy_locate,
    is_unsafe,
    reindent,
    scoring_region,
    validate_tree,
)
from .patches import CreateFile, DeleteFile, ParsedPatches, PatchAction, ReplaceCode, parse_patches
from .phases import ChildResult, MutationContext, PhaseResult, build_phase_messages, mutate, mutate_child, run_phase

__all__ = [
    "DEFAULT_THETA",
    "ActionResult",
    "ApplyReport",
    "ChildResult",
    "CreateFile",
    "DeleteFile",
    "FuzzyMatch",
    "MutationContext",
    "Outcome",
    "ParsedPatches",
    "PatchAction",
    "PhaseResult",
    "ReplaceCode",
    "SafetyPolicy",
    "ValidationError",
    "apply_actions",
    "build_phase_messages",
    "fingerprint",
    "fuzzy_locate",
    "is_unsafe",
    "mutate",
    "mutate_child",
    "parse_patches",
    "reindent",
    "run_phase",
    "scoring_region",
    "validate_tree",
]
