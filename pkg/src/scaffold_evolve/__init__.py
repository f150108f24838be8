"""Evolve an agent scaffold against a single challenge through layer-wise mutation."""

from __future__ import annotations

from .challenge import Challenge, load_challenge
from .engine import BeamConfig, EvolutionResult, EvolutionTree, evolve
from .prompts import PromptPack, load_pack
from .scaffold import AgentScaffold, load_scaffold, load_seed
from .trajectory import Status

__all__ = [
    "AgentScaffold",
    "BeamConfig",
    "Challenge",
    "EvolutionResult",
    "EvolutionTree",
    "PromptPack",
    "Status",
    "evolve",
    "load_challenge",
    "load_pack",
    "load_scaffold",
    "load_seed",
]
