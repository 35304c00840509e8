"""Candidate perturbations for each action space, their scores and application."""

from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .bt_core import FittedModel, rank_positions, ranking
from .dataset import ComparisonDataset, Outcome
from .errors import ValidationError
from .influence import Projector
from .objectives import Objective


class Action(str, enum.Enum):
    DROP = "drop"
    FLIP = "flip"
    ADD_PAIRS = "add-pairs"
    ADD_OUTCOMES = "add-outcomes"
    ADD_WEIGHTED = "add-weighted"

    @property
    def is_add(self) -> bool:
        return self in (Action.ADD_PAIRS, Action.ADD_OUTCOMES, Action.ADD_WEIGHTED)

    @classmethod
    def parse(cls, value: str | Action) -> Action:
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(
                f"unknown action {value!r}; expected one of {[a.value for a in cls]}"
            ) from None


ALL_ACTIONS = tuple(Action)


@dataclass(frozen=True)
class ActionCandidate:
    candidate_id: int
    action: Action
    block_id: int | None = None
    pair: tuple[int, int] | None = None
    outcome: Outcome | None = None
    prob_weight: float | None = None

    def describe(self, d: ComparisonDataset) -> dict:
        if self.block_id is not None:
            b = self.block_id
            i, j, o = int(d.first[b]), int(d.second[b]), Outcome(int(d.outcome[b]))
        else:
            (i, j), o = self.pair, self.outcome
        return {
            "candidate_id": self.candidate_id,
            "action": self.action.value,
            "block_id": self.block_id,
            "i": d.players[i],
            "j": d.players[j],
            "outcome": o.token,
        }


@dataclass(frozen=True)
class ScoredCandidate:
    candidate: ActionCandidate
    delta_f: float
    score: float
    leverage: float | None = None


def _pairs(m: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(m, 1)
    return i.astype(np.int64), j.astype(np.int64)


def enumerate_candidates(d: ComparisonDataset, m: FittedModel | None, action: Action | str) -> list[ActionCandidate]:
    """Every candidate of one action space against the current snapshot.

    Drop covers active blocks, Flip active decisive blocks. The add spaces
    range over all ``M(M-1)/2`` unordered pairs; ``add-pairs`` fixes the
    outcome to the current skill ordering, the other two list both outcomes.
    """
    action = Action.parse(action)
    if action is Action.DROP:
        return [ActionCandidate(k, action, block_id=int(b)) for k, b in enumerate(np.flatnonzero(d.block_active))]
    if action is Action.FLIP:
        blocks = np.flatnonzero(d.block_active & ~d.is_tie)
        return [ActionCandidate(k, action, block_id=int(b)) for k, b in enumerate(blocks)]
    if m is None:
        raise ValidationError("add candidate spaces need a fitted model")
    pi, pj = _pairs(d.M)
    if action is Action.ADD_PAIRS:
        pos = rank_positions(ranking(m))
        out = []
        for k, (i, j) in enumerate(zip(pi, pj)):
            o = Outcome.FIRST_WINS if pos[i] < pos[j] else Outcome.SECOND_WINS
            out.append(ActionCandidate(k, action, pair=(int(i), int(j)), outcome=o))
        return out
    out = []
    prob = expit(m.theta[pi] - m.theta[pj])
    for k, (i, j) in enumerate(zip(pi, pj)):
        for s, o in enumerate((Outcome.FIRST_WINS, Outcome.SECOND_WINS)):
            w = None
            if action is Action.ADD_WEIGHTED:
                w = float(prob[k] if o is Outcome.FIRST_WINS else 1.0 - prob[k])
            out.append(ActionCandidate(2 * k + s, action, pair=(int(i), int(j)), outcome=o, prob_weight=w))
    return out


def score_candidates(cands: Sequence[ActionCandidate], m: FittedModel, obj: Objective,
                     d: ComparisonDataset, method: str = "1sn",
                     projector: Projector | None = None) -> list[ScoredCandidate]:
    """Predicted ``delta_f`` per candidate, sorted ascending by ``(score, candidate_id)``.

    ``score`` equals ``delta_f`` except in the weighted add space, where it is
    ``delta_f`` scaled by the outcome's model probability. Flip is always
    first order.
    """
    if not cands:
        return []
    proj = projector if projector is not None else Projector(m, obj)
    kinds = {c.action for c in cands}
    if len(kinds) != 1:
        raise ValidationError("score one action space at a time")
    action = kinds.pop()
    lev = None
    if action is Action.DROP:
        df, lev = proj.drop_blocks(d, [c.block_id for c in cands], method)
    elif action is Action.FLIP:
        df = proj.flip_blocks(d, [c.block_id for c in cands])
    else:
        df, lev = proj.add_blocks([c.pair[0] for c in cands], [c.pair[1] for c in cands],
                                  [int(c.outcome) for c in cands], method)
    scores = df.copy()
    if action is Action.ADD_WEIGHTED:
        scores *= np.array([c.prob_weight for c in cands])
    ids = np.array([c.candidate_id for c in cands])
    order = np.lexsort((ids, scores))
    keep_lev = lev is not None and method == "1sn"
    return [
        ScoredCandidate(cands[k], float(df[k]), float(scores[k]), float(lev[k]) if keep_lev else None)
        for k in order
    ]


def apply(d: ComparisonDataset, cand: ActionCandidate) -> ComparisonDataset:
    return apply_many(d, [cand])


def apply_many(d: ComparisonDataset, cands: Sequence[ActionCandidate]) -> ComparisonDataset:
    """Apply a set of candidates (drops, then flips, then appended add blocks)."""
    drops = [c.block_id for c in cands if c.action is Action.DROP]
    flips = [c.block_id for c in cands if c.action is Action.FLIP]
    adds = [c for c in cands if c.action.is_add]
    out = d
    if drops:
        out = out.drop_blocks(drops)
    if flips:
        out = out.flip_blocks(flips)
    if adds:
        out = out.add_blocks([c.pair[0] for c in adds], [c.pair[1] for c in adds], [int(c.outcome) for c in adds])
    return out
