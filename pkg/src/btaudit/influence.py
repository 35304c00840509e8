"""Influence of Drop / Add / Flip perturbations on skills and objectives.

Predicted changes are always reported as the change ``delta_f`` caused by the
action itself (not the derivative ``I_n``); for a drop ``delta_f ~= -I_n``.

A weight change ``dw`` on a directed row ``(i, j, y)`` moves the skills by

    dtheta = dw * r * H^{-1} x / (1 + dw * v * x^T H^{-1} x)     (one-step Newton)
    dtheta = dw * r * H^{-1} x                                   (first order)

with ``x = e_i - e_j``, ``r = y - p`` and ``v = p (1 - p)`` at the fit. The
objective change adds the explicit weight term ``dw * df/dw``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from .bt_core import SATURATION_EPS, STABILIZATION_RIDGE, FittedModel, _hessian, _score
from .dataset import ComparisonDataset, Outcome, _ROW_Y, component_count
from .errors import LeverageSaturationError, NotFlippableError, SolveError, ValidationError
from .objectives import Objective, evaluate, explicit_wgrad_pairs, value_at

METHODS = ("if", "1sn")


@dataclass(frozen=True, eq=False)
class InfluenceReport:
    candidate_id: int | str
    action: str
    predicted_delta_f: float
    method: str
    theta_delta: np.ndarray | None = None
    leverage: float | None = None


@dataclass(frozen=True, eq=False)
class GroupDelta:
    group: tuple[int, ...]
    theta_first_order: np.ndarray
    predicted_delta_f: float | None
    theta_refined: np.ndarray | None = None
    warnings: tuple[str, ...] = field(default=())


def _check_method(method: str) -> None:
    if method not in METHODS:
        raise ValidationError(f"unknown influence method {method!r}; expected one of {METHODS}")


class Projector:
    """Objective-aware row scorer bound to one model snapshot.

    Holds ``u = H^{-1} grad f`` so each candidate row costs O(1).
    """

    def __init__(self, m: FittedModel, obj: Objective):
        self.m = m
        self.obj = obj
        self.ev = evaluate(obj, m)
        self.u = m.solve(self.ev.grad)
        self._pw = m.pair_weights if obj.has_explicit_weight_term else None

    def rows(self, i, j, y, dw, method: str, check_saturation: bool = True):
        """Per-row predicted ``delta_f``, leverage ``v x^T H^{-1} x`` and theta coefficient.

        The theta shift of row ``k`` is ``coef[k] * H^{-1} x_k``.
        """
        _check_method(method)
        m = self.m
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        y = np.asarray(y, dtype=float)
        dw = np.broadcast_to(np.asarray(dw, dtype=float), i.shape)
        p = expit(m.theta[i] - m.theta[j])
        r = y - p
        lev = p * (1.0 - p) * m.quad(i, j)
        coef = dw * r
        if method == "1sn":
            div = 1.0 + dw * lev
            if check_saturation:
                bad = np.flatnonzero(div <= SATURATION_EPS)
                if len(bad):
                    raise LeverageSaturationError(int(bad[0]), float(lev[bad[0]]))
            coef = coef / div
        explicit = explicit_wgrad_pairs(self.obj, m.theta, self._pw, i, j)
        delta_f = coef * (self.u[i] - self.u[j]) + dw * explicit
        return delta_f, lev, coef

    def theta_delta(self, i, j, coef) -> np.ndarray:
        c = _score(self.m.M, np.asarray(i), np.asarray(j), np.asarray(coef, dtype=float))
        return self.m.solve(c)

    # block level, vectorised

    def drop_blocks(self, d: ComparisonDataset, block_ids, method: str):
        rows = d.rows_of_blocks(block_ids)
        df, lev, coef = self.rows(d.row_i[rows], d.row_j[rows], d.row_y[rows], -d.weights[rows], method)
        return df.reshape(-1, 2).sum(axis=1), lev.reshape(-1, 2).max(axis=1)

    def add_blocks(self, first, second, outcome, method: str):
        first = np.asarray(first, dtype=np.int64)
        second = np.asarray(second, dtype=np.int64)
        ys = np.array([_ROW_Y[Outcome(int(o))] for o in np.asarray(outcome).ravel()]).reshape(-1, 2)
        i = np.column_stack([first, second]).ravel()
        j = np.column_stack([second, first]).ravel()
        df, lev, _ = self.rows(i, j, ys.ravel(), 1.0, method)
        return df.reshape(-1, 2).sum(axis=1), lev.reshape(-1, 2).max(axis=1)

    def flip_blocks(self, d: ComparisonDataset, block_ids):
        """First-order flip: add of the reversed rows plus drop of the originals."""
        block_ids = np.asarray(block_ids, dtype=np.int64)
        if np.any(d.outcome[block_ids] == Outcome.TIE):
            bad = int(block_ids[np.flatnonzero(d.outcome[block_ids] == Outcome.TIE)[0]])
            raise NotFlippableError(f"block {bad} is a tie and cannot be flipped")
        rows = d.rows_of_blocks(block_ids)
        i, j, y, w = d.row_i[rows], d.row_j[rows], d.row_y[rows], d.weights[rows]
        add_df, _, _ = self.rows(i, j, 1.0 - y, w, "if")
        drop_df, _, _ = self.rows(i, j, y, -w, "if")
        return (add_df + drop_df).reshape(-1, 2).sum(axis=1)


def param_influence(m: FittedModel, d: ComparisonDataset, n: int) -> np.ndarray:
    """``d theta / d w_n = -H^{-1} g_n = r_n H^{-1} x_n`` (pinned coordinate zero)."""
    x = np.zeros(m.M)
    x[m.row_i[n]] += 1.0
    x[m.row_j[n]] -= 1.0
    return m.r[n] * m.solve(x)


def predict_drop(m: FittedModel, obj: Objective, d: ComparisonDataset, block_id: int,
                 method: str = "1sn") -> InfluenceReport:
    if not d.block_active[block_id]:
        raise ValidationError(f"block {block_id} has zero weight and cannot be dropped")
    proj = Projector(m, obj)
    rows = np.array(d.block_rows(block_id))
    df, lev, coef = proj.rows(d.row_i[rows], d.row_j[rows], d.row_y[rows], -d.weights[rows], method)
    return InfluenceReport(
        candidate_id=int(block_id),
        action="drop",
        predicted_delta_f=float(df.sum()),
        method=method,
        theta_delta=proj.theta_delta(d.row_i[rows], d.row_j[rows], coef),
        leverage=float(lev.max()) if method == "1sn" else None,
    )


def predict_add(m: FittedModel, obj: Objective, d: ComparisonDataset | None,
                candidate: tuple[int, int, Outcome | int], method: str = "1sn",
                candidate_id: int | str = "new") -> InfluenceReport:
    i, j, outcome = int(candidate[0]), int(candidate[1]), Outcome(int(candidate[2]))
    if i == j:
        raise ValidationError("cannot add a self-comparison")
    proj = Projector(m, obj)
    yf, yr = _ROW_Y[outcome]
    ri, rj = np.array([i, j]), np.array([j, i])
    df, lev, coef = proj.rows(ri, rj, np.array([yf, yr]), 1.0, method)
    return InfluenceReport(
        candidate_id=candidate_id,
        action="add",
        predicted_delta_f=float(df.sum()),
        method=method,
        theta_delta=proj.theta_delta(ri, rj, coef),
        leverage=float(lev.max()) if method == "1sn" else None,
    )


def predict_flip(m: FittedModel, obj: Objective, d: ComparisonDataset, block_id: int) -> InfluenceReport:
    """Flip = add(reversed block, first order) + drop(original block, first order)."""
    if d.outcome[block_id] == Outcome.TIE:
        raise NotFlippableError(f"block {block_id} is a tie and cannot be flipped")
    reversed_outcome = (Outcome.SECOND_WINS if d.outcome[block_id] == Outcome.FIRST_WINS
                        else Outcome.FIRST_WINS)
    add = predict_add(m, obj, d, (d.first[block_id], d.second[block_id], reversed_outcome), "if")
    drop = predict_drop(m, obj, d, block_id, "if")
    return InfluenceReport(
        candidate_id=int(block_id),
        action="flip",
        predicted_delta_f=add.predicted_delta_f + drop.predicted_delta_f,
        method="if",
        theta_delta=add.theta_delta + drop.theta_delta,
    )


def group_influence(m: FittedModel, obj: Objective | None, d: ComparisonDataset, group,
                    deltas) -> GroupDelta:
    """First-order joint shift ``-H^{-1} sum dw_n g_n`` of a set of rows."""
    group = np.asarray(sorted(set(int(n) for n in group)), dtype=np.int64)
    if len(group) == 0:
        raise ValidationError("group must be nonempty")
    dw = np.broadcast_to(np.asarray(deltas, dtype=float), group.shape)
    c = dw * m.r[group]
    dtheta = m.solve(_score(m.M, m.row_i[group], m.row_j[group], c))
    delta_f = None
    if obj is not None:
        proj = Projector(m, obj)
        explicit = explicit_wgrad_pairs(obj, m.theta, proj._pw, m.row_i[group], m.row_j[group])
        delta_f = float(proj.ev.grad @ dtheta + dw @ explicit)
    return GroupDelta(tuple(int(n) for n in group), dtheta, delta_f)


def grouped_newton(m: FittedModel, d: ComparisonDataset, group, obj: Objective | None = None,
                   ridge: float = STABILIZATION_RIDGE) -> GroupDelta:
    """Delete ``group`` jointly: first-order step, then one Newton step on the kept rows.

    Returned thetas are absolute parameter vectors (not deltas). When ``obj`` is
    given, ``predicted_delta_f = f(theta_refined, w_kept) - f(theta_hat, w)``.
    """
    group = np.asarray(sorted(set(int(n) for n in group)), dtype=np.int64)
    if len(group) == 0:
        raise ValidationError("group must be nonempty")
    kept_w = m.weights.copy()
    kept_w[group] = 0.0
    kept_players = np.union1d(m.row_i[kept_w > 0], m.row_j[kept_w > 0])
    if len(kept_players) < 2:
        raise ValidationError("kept set must cover at least two players")

    s_group = _score(m.M, m.row_i[group], m.row_j[group], m.weights[group] * m.r[group])
    theta1 = m.theta - m.solve(s_group)

    p1 = expit(theta1[m.row_i] - theta1[m.row_j])
    score_k = _score(m.M, m.row_i, m.row_j, kept_w * (m.y - p1))
    h_k = _hessian(m.M, m.row_i, m.row_j, kept_w * p1 * (1.0 - p1))[1:, 1:] + ridge * np.eye(m.M - 1)
    try:
        step = linalg.solve(h_k, score_k[1:], assume_a="pos")
    except linalg.LinAlgError as exc:
        raise SolveError(f"kept-data Hessian solve failed: {exc}") from None
    theta2 = theta1.copy()
    theta2[1:] += step

    warnings = []
    mask = kept_w > 0
    n_comp = component_count(m.M, m.row_i, m.row_j, kept_w)
    isolated = m.M - len(kept_players)
    if n_comp - isolated > 1 or 0 not in kept_players:
        warnings.append("kept comparison graph is not connected to the pinned player; "
                        "skills are identified only up to the stabilisation ridge")
    delta_f = None
    if obj is not None:
        pw_kept = None
        if obj.has_explicit_weight_term:
            mm = m.M
            flat = np.bincount(m.row_i[mask] * mm + m.row_j[mask], weights=kept_w[mask],
                               minlength=mm * mm).reshape(mm, mm)
            pw_kept = flat + flat.T
        delta_f = value_at(obj, theta2, pw_kept) - value_at(obj, m.theta, m.pair_weights)
    return GroupDelta(tuple(int(n) for n in group), theta1, delta_f, theta2, tuple(warnings))
