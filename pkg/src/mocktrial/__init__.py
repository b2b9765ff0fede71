"""Courtroom trial simulation with role-playing LLM agents, plus judgment and process evaluation."""

from __future__ import annotations

from .domain import CaseMaterials, Judgment, Role, Stage, TrialTranscript, load_case
from .judgment import evaluate, extract_judgment, parse_verdict_block
from .orchestrator import load_run_config, run_trial, simulate
from .retrieval import load_corpora

__version__ = "0.1.0"

__all__ = [
    "CaseMaterials",
    "Judgment",
    "Role",
    "Stage",
    "TrialTranscript",
    "evaluate",
    "extract_judgment",
    "load_case",
    "load_corpora",
    "load_run_config",
    "parse_verdict_block",
    "run_trial",
    "simulate",
]
