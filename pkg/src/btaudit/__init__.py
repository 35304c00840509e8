"""Bradley-Terry leaderboard fitting with influence-based robustness audits."""

from __future__ import annotations

from .actions import Action, ActionCandidate, apply, apply_many, enumerate_candidates, score_candidates
from .audit import (
    AuditResult,
    ci_k_selection,
    combine_scores,
    greedy_curve,
    player_removal,
    robustness_scores,
    strict_ci_search,
    topk_search,
)
from .bt_core import FittedModel, confidence_intervals, fit, ranking, standard_errors
from .dataset import ComparisonDataset, Outcome, RawComparison, expand, from_arrays, load
from .errors import BTAuditError, NumericalError, ValidationError
from .influence import predict_add, predict_drop, predict_flip
from .manipulate import EloParams, ci_reduce, make_stream, run_stream
from .objectives import Objective, tau_discrete

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ActionCandidate",
    "AuditResult",
    "BTAuditError",
    "ComparisonDataset",
    "EloParams",
    "FittedModel",
    "NumericalError",
    "Objective",
    "Outcome",
    "RawComparison",
    "ValidationError",
    "apply",
    "apply_many",
    "ci_k_selection",
    "ci_reduce",
    "combine_scores",
    "confidence_intervals",
    "enumerate_candidates",
    "expand",
    "fit",
    "from_arrays",
    "greedy_curve",
    "load",
    "make_stream",
    "player_removal",
    "predict_add",
    "predict_drop",
    "predict_flip",
    "ranking",
    "robustness_scores",
    "run_stream",
    "score_candidates",
    "standard_errors",
    "strict_ci_search",
    "tau_discrete",
    "topk_search",
]
