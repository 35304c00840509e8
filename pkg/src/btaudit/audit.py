"""Robustness audits over a fixed base dataset.

* :func:`topk_search` - fewest greedy actions that make a near-boundary skill
  gap cross zero (influence report per pair computed once, no refit during
  selection, refit to verify).
* :func:`ci_k_selection` / :func:`strict_ci_search` - the same question under
  strict confidence-interval separation.
* :func:`greedy_curve` - tau / CI-trace degradation, rescoring and refitting
  after every applied action.
* :func:`robustness_scores` and :func:`player_removal`.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .actions import (
    Action,
    ActionCandidate,
    ScoredCandidate,
    apply,
    apply_many,
    enumerate_candidates,
    score_candidates,
)
from .bt_core import FittedModel, fit, rank_positions, ranking, standard_errors, z_value
from .dataset import ComparisonDataset
from .errors import ValidationError
from .influence import grouped_newton
from .objectives import REMOVAL_TEMPERATURE, TAU_TEMPERATURE, Objective, restricted, tau_discrete, value_at

log = logging.getLogger(__name__)

DEFAULT_BUDGET_FRACTION = 0.05
DEFAULT_TRACE_BUDGET = 25
DEFAULT_TAU_BUDGET = 30
# refit gaps this close to zero are solver noise around an exact tie, which counts as crossed
GAP_ZERO_TOL = 1e-9
VERIFY_MODES = ("refit", "influence-estimate")


@dataclass
class AuditResult:
    succeeded: bool
    min_actions: int | None
    boundary_pair: tuple[int, int] | None
    applied: list[ActionCandidate]
    refit_gap: float | None
    budget: int
    budget_fraction: float | None
    action: Action
    k: int
    initial_gap: float | None = None
    verify: str = "refit"
    note: str | None = None

    @property
    def robust(self) -> bool:
        return not self.succeeded

    def to_dict(self, d: ComparisonDataset) -> dict:
        pair = None
        if self.boundary_pair is not None:
            pair = [d.players[self.boundary_pair[0]], d.players[self.boundary_pair[1]]]
        return {
            "succeeded": self.succeeded,
            "min_actions": self.min_actions if self.succeeded else "robust",
            "boundary_pair": pair,
            "k": self.k,
            "action": self.action.value,
            "budget": self.budget,
            "budget_fraction": self.budget_fraction,
            "initial_gap": self.initial_gap,
            "refit_gap": self.refit_gap,
            "verify": self.verify,
            "applied": [c.describe(d) for c in self.applied],
            "note": self.note,
        }


def action_budget(d: ComparisonDataset, budget_fraction: float) -> int:
    if not 0.0 < budget_fraction <= 1.0:
        raise ValidationError("budget fraction must lie in (0, 1]")
    return max(1, math.ceil(budget_fraction * int(d.block_active.sum())))


def boundary_pairs(m: FittedModel, k: int) -> list[tuple[int, int]]:
    """Cross-boundary pairs from ranks ``{k-1, k} x {k+1, k+2}`` by ascending gap."""
    order = ranking(m)
    n = len(order)
    if not 1 <= k < n:
        raise ValidationError(f"boundary rank k must satisfy 1 <= k < {n}")
    inside = [order[r - 1] for r in (k - 1, k) if 1 <= r <= n]
    outside = [order[r - 1] for r in (k + 1, k + 2) if 1 <= r <= n]
    pairs = [(int(i), int(j)) for i in inside for j in outside]
    gaps = [abs(m.theta[i] - m.theta[j]) for i, j in pairs]
    return [pairs[t] for t in np.argsort(gaps, kind="stable")]


def _helpful(scored: list[ScoredCandidate], g: float) -> list[ScoredCandidate]:
    """Candidates pushing the gap toward zero, strongest first."""
    if g > 0:
        return [s for s in scored if s.score < 0]
    if g < 0:
        return [s for s in reversed(scored) if s.score > 0]
    return []


def _crossed(g: float, g_new: float) -> bool:
    return (g > 0 and g_new <= GAP_ZERO_TOL) or (g < 0 and g_new >= -GAP_ZERO_TOL)


def topk_search(
    d: ComparisonDataset,
    k: int = 1,
    action: Action | str = Action.DROP,
    budget_fraction: float = DEFAULT_BUDGET_FRACTION,
    verify: str = "refit",
    method: str = "1sn",
    budget: int | None = None,
    pairs: Sequence[tuple[int, int]] | None = None,
    model: FittedModel | None = None,
) -> AuditResult:
    """Smallest greedy action count that flips the sign of a boundary gap.

    For ``alpha = 1..budget`` and each pair, the ``alpha`` candidates with the
    strongest predicted push toward crossing (from a per-pair report computed
    once on the original fit) are applied to the original dataset and checked.
    """
    action = Action.parse(action)
    if verify not in VERIFY_MODES:
        raise ValidationError(f"verify must be one of {VERIFY_MODES}")
    m = model if model is not None else fit(d)
    if budget is None:
        budget = action_budget(d, budget_fraction)
    if budget < 1:
        raise ValidationError("budget must be at least 1")
    pairs = boundary_pairs(m, k) if pairs is None else [(int(i), int(j)) for i, j in pairs]
    cands = enumerate_candidates(d, m, action)
    n_raw = int(d.block_active.sum())
    cache: dict[tuple[int, int], tuple[float, list[ScoredCandidate]]] = {}
    for i, j in pairs:
        g = float(m.theta[i] - m.theta[j])
        cache[(i, j)] = (g, _helpful(score_candidates(cands, m, Objective.gap(i, j), d, method), g))

    for alpha in range(1, budget + 1):
        live = False
        for i, j in pairs:
            g, helpful = cache[(i, j)]
            if len(helpful) < alpha:
                continue
            live = True
            chosen = [s.candidate for s in helpful[:alpha]]
            if verify == "refit":
                m2 = fit(apply_many(d, chosen), theta0=m.theta)
                g_new = float(m2.theta[i] - m2.theta[j])
            else:
                g_new = g + sum(s.delta_f for s in helpful[:alpha])
            if _crossed(g, g_new):
                return AuditResult(True, alpha, (i, j), chosen, g_new, budget, alpha / n_raw, action, k,
                                   initial_gap=g, verify=verify)
        if not live:
            break
    first = pairs[0] if pairs else None
    return AuditResult(False, None, first, [], None, budget, None, action, k,
                       initial_gap=cache[first][0] if first else None, verify=verify)


def _strict_gap(theta, se, z, i, j) -> float:
    return float((theta[i] + z * se[i]) - (theta[j] - z * se[j]))


def ci_k_selection(d: ComparisonDataset, ci_level: float = 0.95, ci_method: str = "local_info",
                   model: FittedModel | None = None) -> tuple[int, int, int, float] | None:
    """Boundary ``(k, insider, outsider, g)`` with the smallest nonnegative strict CI gap."""
    m = model if model is not None else fit(d)
    z = z_value(ci_level)
    se = standard_errors(m, ci_method)
    order = ranking(m)
    best = None
    for k in range(1, d.M):
        i, j = int(order[k - 1]), int(order[k])
        g = _strict_gap(m.theta, se, z, i, j)
        if g >= 0 and (best is None or g < best[3]):
            best = (k, i, j, g)
    return best


def strict_ci_search(
    d: ComparisonDataset,
    k: int,
    pair: tuple[int, int] | None = None,
    action: Action | str = Action.DROP,
    ci_level: float = 0.95,
    budget_fraction: float = DEFAULT_BUDGET_FRACTION,
    ci_method: str = "local_info",
    method: str = "1sn",
    budget: int | None = None,
    model: FittedModel | None = None,
) -> AuditResult:
    """Fewest actions after which the outsider's lower bound exceeds the insider's upper bound.

    Candidates are ranked once by their predicted effect on the point gap
    (standard errors held fixed); refits happen only when the first-order
    screened strict gap turns negative.
    """
    action = Action.parse(action)
    m = model if model is not None else fit(d)
    order = ranking(m)
    if pair is None:
        if not 1 <= k < d.M:
            raise ValidationError(f"boundary rank k must satisfy 1 <= k < {d.M}")
        pair = (int(order[k - 1]), int(order[k]))
    i, j = int(pair[0]), int(pair[1])
    z = z_value(ci_level)
    if budget is None:
        budget = action_budget(d, budget_fraction)
    n_raw = int(d.block_active.sum())
    g = _strict_gap(m.theta, standard_errors(m, ci_method), z, i, j)
    if g < 0:
        return AuditResult(True, 0, (i, j), [], g, budget, 0.0, action, k, initial_gap=g,
                           note="strict target already met")
    scored = score_candidates(enumerate_candidates(d, m, action), m, Objective.gap(i, j), d, method)
    helpful = [s for s in scored if s.score < 0]
    for ell in range(1, min(budget, len(helpful)) + 1):
        screened = g + sum(s.delta_f for s in helpful[:ell])
        if screened >= 0:
            continue
        chosen = [s.candidate for s in helpful[:ell]]
        m2 = fit(apply_many(d, chosen), theta0=m.theta)
        g_refit = _strict_gap(m2.theta, standard_errors(m2, ci_method), z, i, j)
        if g_refit < 0:
            return AuditResult(True, ell, (i, j), chosen, g_refit, budget, ell / n_raw, action, k, initial_gap=g)
    return AuditResult(False, None, (i, j), [], None, budget, None, action, k, initial_gap=g)


@dataclass(frozen=True)
class CurvePoint:
    step: int
    value: float
    policy: str


@dataclass
class CurveResult:
    objective: str
    action: Action
    policy: str
    points: list[CurvePoint]
    selected: list[ActionCandidate] = field(default_factory=list)
    truncated: bool = False
    seed: int | None = None

    @property
    def final(self) -> float:
        return self.points[-1].value


def _drop_pool(d: ComparisonDataset, cands: list[ActionCandidate]) -> list[ActionCandidate]:
    """Drop candidates that do not remove a player's last active comparison."""
    active = d.block_active
    deg = np.bincount(d.first[active], minlength=d.M) + np.bincount(d.second[active], minlength=d.M)
    return [c for c in cands if deg[d.first[c.block_id]] > 1 and deg[d.second[c.block_id]] > 1]


def greedy_curve(
    d: ComparisonDataset,
    objective: str = "tau",
    action: Action | str = Action.FLIP,
    budget: int = DEFAULT_TAU_BUDGET,
    policy: str = "influence",
    seed: int | None = None,
    temperature: float = TAU_TEMPERATURE,
    method: str = "1sn",
) -> CurveResult:
    """Apply ``budget`` actions one at a time, refitting after each.

    ``objective='tau'`` records discrete Kendall tau against the frozen
    initial ranking; ``objective='trace'`` records the percentage change of
    the CI-trace proxy. The influence policy takes the candidate with the most
    negative predicted change each step; the random policy draws uniformly
    from the same pool.
    """
    action = Action.parse(action)
    if objective not in ("tau", "trace"):
        raise ValidationError("curve objective must be 'tau' or 'trace'")
    if policy not in ("influence", "random"):
        raise ValidationError("policy must be 'influence' or 'random'")
    if budget < 1:
        raise ValidationError("budget must be at least 1")
    if policy == "random" and seed is None:
        raise ValidationError("random policy needs a seed")
    rng = np.random.default_rng(seed)
    m = fit(d)
    reference = [int(k) for k in ranking(m)]
    if objective == "tau":
        obj = Objective.tau(reference, temperature)
    else:
        obj = Objective.ci_trace()
    u0 = value_at(Objective.ci_trace(), m.theta, m.pair_weights) if objective == "trace" else None

    def measure(model: FittedModel) -> float:
        if objective == "tau":
            return tau_discrete(ranking(model), reference)
        return 100.0 * (value_at(obj, model.theta, model.pair_weights) - u0) / u0

    result = CurveResult(objective, action, policy, [CurvePoint(0, measure(m), policy)], seed=seed)
    cur = d
    for step in range(1, budget + 1):
        cands = enumerate_candidates(cur, m, action)
        if action is Action.DROP:
            cands = _drop_pool(cur, cands)
        if not cands:
            result.truncated = True
            break
        if policy == "influence":
            pick = score_candidates(cands, m, obj, cur, method)[0].candidate
        else:
            pick = cands[int(rng.integers(len(cands)))]
        cur = apply(cur, pick)
        m = fit(cur, theta0=m.theta)
        result.selected.append(pick)
        result.points.append(CurvePoint(step, measure(m), policy))
    return result


@dataclass(frozen=True)
class RobustnessScores:
    r_top1: float
    r_ci: float
    r_tau: float
    r_all: float
    details: dict = field(default_factory=dict, compare=False)


def combine_scores(r_top1: float, r_ci: float, r_tau: float, details: dict | None = None) -> RobustnessScores:
    return RobustnessScores(r_top1, r_ci, r_tau, (r_top1 + r_ci + r_tau) / 3.0, details or {})


def robustness_scores(
    d: ComparisonDataset,
    top1_fraction: float = DEFAULT_BUDGET_FRACTION,
    trace_budget: int = DEFAULT_TRACE_BUDGET,
    tau_budget: int = DEFAULT_TAU_BUDGET,
    curve_actions: Sequence[Action | str] = tuple(Action),
    temperature: float = TAU_TEMPERATURE,
    method: str = "1sn",
) -> RobustnessScores:
    """Normalised Top-1 / CI-trace / tau scores; each takes the most damaging action."""
    m = fit(d)
    b_top1 = action_budget(d, top1_fraction)
    top1 = {}
    for a in (Action.DROP, Action.FLIP):
        res = topk_search(d, 1, a, budget=b_top1, method=method, model=m)
        top1[a.value] = res.min_actions if res.succeeded else b_top1
    best_top1 = min(top1, key=lambda a: (top1[a], a))
    ci, tau = {}, {}
    for a in map(Action.parse, curve_actions):
        trace = greedy_curve(d, "trace", a, trace_budget, "influence", method=method)
        ci[a.value] = 1.0 + trace.final / 100.0
        tcurve = greedy_curve(d, "tau", a, tau_budget, "influence", temperature=temperature, method=method)
        tau[a.value] = tcurve.final
    best_ci = min(ci, key=lambda a: (ci[a], a))
    best_tau = min(tau, key=lambda a: (tau[a], a))
    details = {
        "top1_budget": b_top1,
        "top1_b_star": top1,
        "top1_action": best_top1,
        "ci_by_action": ci,
        "ci_action": best_ci,
        "tau_by_action": tau,
        "tau_action": best_tau,
        "trace_budget": trace_budget,
        "tau_budget": tau_budget,
    }
    return combine_scores(top1[best_top1] / b_top1, ci[best_ci], tau[best_tau], details)


@dataclass
class PlayerRemovalReport:
    player: int
    predicted_tau_influence: float
    predicted_delta_tau: float
    removed_fraction: float
    exact_delta_tau: float | None = None
    moved: int | None = None
    max_shift: int | None = None
    topk_changes: int | None = None
    warnings: list[str] = field(default_factory=list)


def _removal_exact(d: ComparisonDataset, m: FittedModel, player: int, topk: int) -> dict:
    survivors_ref = restricted(ranking(m), [p for p in range(d.M) if p != player])
    sub, keep = d.remove_player(player)
    out: dict = {"warnings": []}
    if sub.N == 0 or not sub.block_active.any():
        out["warnings"].append("no comparisons remain after removal; exact refit skipped")
        return out
    if not sub.connected:
        out["warnings"].append("removal disconnects the comparison graph")
    m_sub = fit(sub)
    new_order = [int(keep[k]) for k in ranking(m_sub)]
    before = {p: r for r, p in enumerate(survivors_ref)}
    shifts = np.array([abs(before[p] - r) for r, p in enumerate(new_order)])
    out.update(
        exact_delta_tau=tau_discrete(new_order, survivors_ref) - 1.0,
        moved=int((shifts > 0).sum()),
        max_shift=int(shifts.max()),
        topk_changes=len(set(survivors_ref[:topk]) - set(new_order[:topk])),
    )
    return out


def player_removal(
    d: ComparisonDataset,
    top_n: int = 1,
    temperature: float = REMOVAL_TEMPERATURE,
    topk: int = 10,
    threads: int = 1,
    model: FittedModel | None = None,
) -> list[PlayerRemovalReport]:
    """Rank players by grouped-Newton predicted tau-surrogate shift; refit the top ``top_n``.

    Both orderings are restricted to the surviving players. The report list
    is sorted by descending ``|predicted_tau_influence|``.
    """
    if d.M < 3:
        raise ValidationError("player removal needs at least three players")
    m = model if model is not None else fit(d)
    order = ranking(m)
    n_raw = max(1, int(d.block_active.sum()))
    reports = []
    for p in range(d.M):
        survivors = [q for q in range(d.M) if q != p]
        ref = restricted(order, survivors)
        rows = d.incident_rows(p)
        removed = len(d.incident_blocks(p)) / n_raw
        if len(rows) == 0:
            reports.append(PlayerRemovalReport(p, 0.0, 0.0, removed, 0.0, 0, 0, 0))
            continue
        kept = m.weights > 0
        kept[rows] = False
        if len(np.union1d(m.row_i[kept], m.row_j[kept])) < 2:
            reports.append(PlayerRemovalReport(
                p, 0.0, 0.0, removed,
                warnings=["removing this player leaves no comparisons among survivors"],
            ))
            continue
        gd = grouped_newton(m, d, rows, Objective.tau(ref, temperature))
        pred_order = restricted(ranking(gd.theta_refined), survivors)
        reports.append(PlayerRemovalReport(
            p, float(gd.predicted_delta_f), tau_discrete(pred_order, ref) - 1.0, removed,
            warnings=list(gd.warnings),
        ))
    reports.sort(key=lambda r: (-abs(r.predicted_tau_influence), r.player))
    chosen = [r for r in reports[:max(0, top_n)] if r.exact_delta_tau is None]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        exact = list(pool.map(lambda r: _removal_exact(d, m, r.player, topk), chosen))
    for r, ex in zip(chosen, exact):
        r.warnings.extend(ex.pop("warnings"))
        for key, val in ex.items():
            setattr(r, key, val)
    return reports
