"""Online stream experiments: targeted top-k manipulation and targeted CI reduction.

Two stream policies decide, for each exposed pair ``(a, b)``, one of
``a_wins``, ``b_wins``, ``tie`` or ``remove``:

* ``rigging`` - greedy Elo-reward baseline on its own incrementally updated
  Elo ratings;
* ``influence`` - first-order influence of the decision on the current
  top-k boundary gap of the BT fit.

Success is always judged on the BT refit ranking.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .actions import Action, enumerate_candidates, score_candidates
from .bt_core import FittedModel, fit, rank_positions, ranking, standard_errors, z_value
from .dataset import ComparisonDataset, Outcome
from .errors import IsolatedPlayerError, ValidationError
from .influence import Projector
from .objectives import Objective

DEFAULT_STREAM_LENGTH = 120
DEFAULT_CI_BUDGET = 12
TARGET_PERCENTILES = (0.1, 0.5, 0.9)
# influence gains at or below this are treated as numerical zero, so remove wins
INFLUENCE_NOISE_FLOOR = 1e-12


class Decision(str, enum.Enum):
    A_WINS = "a_wins"
    B_WINS = "b_wins"
    TIE = "tie"
    REMOVE = "remove"


# argmax ties resolve to the earliest entry
DECISION_ORDER = (Decision.A_WINS, Decision.B_WINS, Decision.TIE, Decision.REMOVE)

_DECISION_OUTCOME = {
    Decision.A_WINS: Outcome.FIRST_WINS,
    Decision.B_WINS: Outcome.SECOND_WINS,
    Decision.TIE: Outcome.TIE,
}


class Direction(str, enum.Enum):
    PROMOTE = "promote"
    DEMOTE = "demote"


@dataclass(frozen=True)
class EloParams:
    K: float = 4.0
    BASE: float = 10.0
    SCALE: float = 400.0

    def __post_init__(self) -> None:
        if min(self.K, self.BASE, self.SCALE) <= 0:
            raise ValidationError("Elo constants must be positive")
        if self.BASE == 1.0:
            raise ValidationError("Elo BASE must differ from 1")


def elo_expected(r_a: float, r_b: float, elo: EloParams) -> float:
    """Elo win expectation of ``a`` against ``b``."""
    return 1.0 / (1.0 + elo.BASE ** ((r_b - r_a) / elo.SCALE))


def elo_update(r_a: float, r_b: float, decision: Decision, elo: EloParams) -> tuple[float, float]:
    e_a = elo_expected(r_a, r_b, elo)
    e_b = elo_expected(r_b, r_a, elo)
    if decision is Decision.A_WINS:
        return r_a + elo.K * e_b, r_b - elo.K * e_b
    if decision is Decision.B_WINS:
        return r_a - elo.K * e_a, r_b + elo.K * e_a
    if decision is Decision.TIE:
        shift = 0.5 * elo.K * (e_a - e_b)
        return r_a - shift, r_b + shift
    return r_a, r_b


def elo_from_bt(theta: np.ndarray, elo: EloParams, anchor: float = 1000.0) -> np.ndarray:
    """Map BT log-odds skills onto the Elo scale."""
    return anchor + np.asarray(theta, dtype=float) * elo.SCALE / math.log(elo.BASE)


def _argmax(scores: dict[Decision, float]) -> Decision:
    best = DECISION_ORDER[0]
    for dec in DECISION_ORDER[1:]:
        if scores[dec] > scores[best]:
            best = dec
    return best


def condition_met(rank: int, direction: Direction, k: int) -> bool:
    """``rank`` is 1-based."""
    return rank <= k if direction is Direction.PROMOTE else rank > k


@dataclass
class StreamState:
    d: ComparisonDataset
    model: FittedModel
    target: int
    direction: Direction
    k: int
    decisions: list[Decision] = field(default_factory=list)
    rank_history: list[int] = field(default_factory=list)
    actions_used: int = 0
    ratings: np.ndarray | None = None
    pairs: list[tuple[int, int]] = field(default_factory=list)
    scores: list[dict[str, float]] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return int(rank_positions(ranking(self.model))[self.target]) + 1

    @property
    def succeeded(self) -> bool:
        return condition_met(self.rank, self.direction, self.k)

    def to_dict(self) -> dict:
        return {
            "target": self.d.players[self.target],
            "direction": self.direction.value,
            "k": self.k,
            "succeeded": self.succeeded,
            "actions_used": self.actions_used,
            "decisions": [dec.value for dec in self.decisions],
            "pairs": [[self.d.players[a], self.d.players[b]] for a, b in self.pairs],
            "rank_history": list(self.rank_history),
        }


def _apply_decision(state: StreamState, a: int, b: int, decision: Decision) -> None:
    state.decisions.append(decision)
    state.pairs.append((a, b))
    if decision is not Decision.REMOVE:
        state.d = state.d.add_blocks([a], [b], [int(_DECISION_OUTCOME[decision])])
        state.model = fit(state.d, theta0=state.model.theta)
        state.actions_used += 1
    state.rank_history.append(state.rank)


def rigging_rewards(ratings: np.ndarray, target: int, a: int, b: int, direction: Direction,
                    elo: EloParams) -> dict[Decision, float]:
    """Target-relative Elo reward of each one-step hypothetical update.

    When the target itself plays, its own hypothetical rating is used as the
    reference so that winning is rewarded for promotion.
    """
    out = {}
    for dec in DECISION_ORDER:
        ra, rb = elo_update(float(ratings[a]), float(ratings[b]), dec, elo)
        r_star = ra if target == a else rb if target == b else float(ratings[target])
        reward = elo_expected(r_star, ra, elo) + elo_expected(r_star, rb, elo)
        out[dec] = -reward if direction is Direction.DEMOTE else reward
    return out


def omni_rigging_step(state: StreamState, pair: tuple[int, int], elo: EloParams = EloParams()) -> Decision:
    a, b = int(pair[0]), int(pair[1])
    if state.ratings is None:
        state.ratings = elo_from_bt(state.model.theta, elo)
    scores = rigging_rewards(state.ratings, state.target, a, b, state.direction, elo)
    dec = _argmax(scores)
    state.ratings = state.ratings.copy()
    state.ratings[a], state.ratings[b] = elo_update(float(state.ratings[a]), float(state.ratings[b]), dec, elo)
    state.scores.append({k.value: v for k, v in scores.items()})
    _apply_decision(state, a, b, dec)
    return dec


def boundary_objective(state: StreamState) -> Objective:
    """Current gap ``theta_target - theta_{m_k}`` (promote) or ``theta_{m_{k+1}} - theta_target``."""
    order = ranking(state.model)
    if state.direction is Direction.PROMOTE:
        return Objective.gap(state.target, int(order[state.k - 1]))
    return Objective.gap(int(order[state.k]), state.target)


def influence_scores(state: StreamState, a: int, b: int) -> dict[Decision, float]:
    proj = Projector(state.model, boundary_objective(state))
    df, _ = proj.add_blocks([a, a], [b, b], [Outcome.FIRST_WINS, Outcome.SECOND_WINS], "if")
    return {
        Decision.A_WINS: float(df[0]),
        Decision.B_WINS: float(df[1]),
        Decision.TIE: float(df[0] + df[1]),
        Decision.REMOVE: 0.0,
    }


def influence_online_step(state: StreamState, pair: tuple[int, int]) -> Decision:
    a, b = int(pair[0]), int(pair[1])
    scores = influence_scores(state, a, b)
    gain = max(scores[dec] for dec in DECISION_ORDER if dec is not Decision.REMOVE)
    dec = _argmax(scores) if gain > INFLUENCE_NOISE_FLOOR else Decision.REMOVE
    state.scores.append({k.value: v for k, v in scores.items()})
    _apply_decision(state, a, b, dec)
    return dec


def run_stream(
    d: ComparisonDataset,
    policy: str,
    target: int,
    direction: Direction | str,
    k: int,
    stream: Sequence[tuple[int, int]],
    budget: int = DEFAULT_STREAM_LENGTH,
    elo: EloParams = EloParams(),
    model: FittedModel | None = None,
) -> StreamState:
    """Feed up to ``budget`` exposed pairs to a policy until the target condition holds."""
    direction = Direction(direction)
    if policy not in ("influence", "rigging"):
        raise ValidationError("policy must be 'influence' or 'rigging'")
    if not 1 <= k < d.M:
        raise ValidationError(f"rank cutoff k must satisfy 1 <= k < {d.M}")
    if not 0 <= target < d.M:
        raise ValidationError("target out of range")
    for a, b in stream:
        if a == b or not (0 <= a < d.M and 0 <= b < d.M):
            raise ValidationError(f"invalid stream pair ({a}, {b})")
    m = model if model is not None else fit(d)
    state = StreamState(d, m, int(target), direction, int(k))
    state.rank_history.append(state.rank)
    for pair in list(stream)[:budget]:
        if state.succeeded:
            break
        if policy == "influence":
            influence_online_step(state, pair)
        else:
            omni_rigging_step(state, pair, elo)
    return state


def make_stream(m: int, length: int = DEFAULT_STREAM_LENGTH, seed: int = 0) -> list[tuple[int, int]]:
    """Seeded uniform draws over unordered pairs, each shown in a random orientation."""
    if m < 2:
        raise ValidationError("a stream needs at least two players")
    rng = np.random.default_rng(seed)
    pi, pj = np.triu_indices(m, 1)
    idx = rng.integers(len(pi), size=length)
    swap = rng.random(length) < 0.5
    return [(int(pj[t]), int(pi[t])) if s else (int(pi[t]), int(pj[t])) for t, s in zip(idx, swap)]


def stream_targets(model: FittedModel, direction: Direction | str,
                   percentiles: Sequence[float] = TARGET_PERCENTILES) -> list[tuple[int, int]]:
    """``(k, target)`` per leaderboard region; promotion targets rank k+1, demotion rank k."""
    direction = Direction(direction)
    order = ranking(model)
    n = len(order)
    out = []
    for q in percentiles:
        k = min(n - 1, max(1, int(round(q * n))))
        target = order[k] if direction is Direction.PROMOTE else order[k - 1]
        if (k, int(target)) not in out:
            out.append((k, int(target)))
    return out


@dataclass
class CIReduction:
    policy: str
    target: int
    widths: list[float]
    added: list[tuple[int, int, Outcome]]
    seed: int | None = None

    @property
    def pct_change(self) -> float:
        return 100.0 * (self.widths[-1] - self.widths[0]) / self.widths[0]

    def to_dict(self, d: ComparisonDataset) -> dict:
        return {
            "policy": self.policy,
            "target": d.players[self.target],
            "widths": list(self.widths),
            "pct_change": self.pct_change,
            "added": [[d.players[i], d.players[j], o.token] for i, j, o in self.added],
            "seed": self.seed,
        }


def _skill_winner(model: FittedModel, i: int, j: int) -> Outcome:
    pos = rank_positions(ranking(model))
    return Outcome.FIRST_WINS if pos[i] < pos[j] else Outcome.SECOND_WINS


def ci_reduce(
    d: ComparisonDataset,
    target: int,
    budget: int = DEFAULT_CI_BUDGET,
    mode: Action | str = Action.ADD_PAIRS,
    policy: str = "influence",
    ci_level: float = 0.95,
    seed: int | None = None,
    ci_method: str = "local_info",
    method: str = "1sn",
) -> CIReduction:
    """Add ``budget`` matches one at a time and track the target's CI width.

    Every policy assigns the outcome by the current skill ordering and refits
    after each addition.
    """
    mode = Action.parse(mode)
    if not mode.is_add:
        raise ValidationError("ci_reduce needs an add candidate space")
    if policy not in ("influence", "arena_active", "random"):
        raise ValidationError("policy must be 'influence', 'arena_active' or 'random'")
    if budget < 1:
        raise ValidationError("budget must be at least 1")
    if policy == "random" and seed is None:
        raise ValidationError("random policy needs a seed")
    if not 0 <= target < d.M:
        raise ValidationError("target out of range")
    z = z_value(ci_level)
    m = fit(d)
    if not d.incident_blocks(target).size:
        raise IsolatedPlayerError(target)
    result = CIReduction(policy, int(target), [float(2 * z * standard_errors(m, ci_method)[target])], [], seed)

    queue = []
    if policy == "influence":
        scored = score_candidates(enumerate_candidates(d, m, mode), m, Objective.ci_player(target), d, method)
        queue = [s.candidate.pair for s in scored]
    rng = np.random.default_rng(seed)
    pi, pj = np.triu_indices(d.M, 1)
    cur = d
    for step in range(budget):
        if policy == "influence":
            if step >= len(queue):
                break
            i, j = queue[step]
        elif policy == "arena_active":
            se = standard_errors(m, ci_method)
            best, best_s = None, -np.inf
            for other in range(d.M):
                if other == target:
                    continue
                var = se[target] ** 2 + se[other] ** 2
                n = cur.pair_count(target, other)
                if not np.isfinite(var):
                    continue
                s = np.inf if n == 0 else math.sqrt(var / n) - math.sqrt(var / (n + 1))
                if s > best_s:
                    best, best_s = other, s
            if best is None:
                break
            i, j = target, best
        else:
            t = int(rng.integers(len(pi)))
            i, j = int(pi[t]), int(pj[t])
        o = _skill_winner(m, i, j)
        cur = cur.add_blocks([i], [j], [int(o)])
        m = fit(cur, theta0=m.theta)
        result.added.append((int(i), int(j), o))
        result.widths.append(float(2 * z * standard_errors(m, ci_method)[target]))
    return result
