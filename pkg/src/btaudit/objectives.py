"""Scalar leaderboard functionals ``f(theta, w)`` with their derivatives.

Four kinds are supported:

``gap``        ``theta_i - theta_j``
``ci_player``  ``1 / rho_i^2`` with ``rho_i^2 = sum_j w_ij p_ij (1 - p_ij)``
``ci_trace``   ``sum_i 1 / rho_i^2``
``tau``        tanh-smoothed Kendall correlation against a frozen reference order

Only the two CI kinds depend on the weights directly; for them
:func:`explicit_wgrad` is the partial derivative in ``w_n`` at fixed theta.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .bt_core import FittedModel, ranking
from .dataset import ComparisonDataset
from .errors import IsolatedPlayerError, ValidationError

KINDS = ("gap", "ci_player", "ci_trace", "tau")

TAU_TEMPERATURE = 0.5
REMOVAL_TEMPERATURE = 0.1


@dataclass(frozen=True)
class Objective:
    kind: str
    i: int | None = None
    j: int | None = None
    temperature: float = TAU_TEMPERATURE
    reference: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"unknown objective kind {self.kind!r}")
        if self.kind == "gap" and (self.i is None or self.j is None or self.i == self.j):
            raise ValidationError("gap objective needs two distinct players")
        if self.kind == "ci_player" and self.i is None:
            raise ValidationError("ci_player objective needs a player")
        if self.kind == "tau":
            if self.temperature <= 0:
                raise ValidationError("temperature must be positive")
            if self.reference is None or len(self.reference) < 2:
                raise ValidationError("tau objective needs a reference order over at least two players")
            if len(set(self.reference)) != len(self.reference):
                raise ValidationError("reference order repeats a player")

    @classmethod
    def gap(cls, i: int, j: int) -> Objective:
        return cls("gap", i=int(i), j=int(j))

    @classmethod
    def ci_player(cls, i: int) -> Objective:
        return cls("ci_player", i=int(i))

    @classmethod
    def ci_trace(cls) -> Objective:
        return cls("ci_trace")

    @classmethod
    def tau(cls, reference: Sequence[int], temperature: float = TAU_TEMPERATURE) -> Objective:
        return cls("tau", temperature=float(temperature), reference=tuple(int(k) for k in reference))

    @classmethod
    def tau_from_model(cls, m: FittedModel, temperature: float = TAU_TEMPERATURE,
                       exclude: Sequence[int] = ()) -> Objective:
        """Tau objective against the ranking of ``m`` (optionally restricted to survivors)."""
        drop = set(int(k) for k in exclude)
        return cls.tau([k for k in ranking(m) if k not in drop], temperature)

    @property
    def has_explicit_weight_term(self) -> bool:
        return self.kind in ("ci_player", "ci_trace")

    def describe(self) -> str:
        if self.kind == "gap":
            return f"gap:{self.i},{self.j}"
        if self.kind == "ci_player":
            return f"ci-player:{self.i}"
        if self.kind == "tau":
            return f"tau:T={self.temperature}"
        return "ci-trace"


@dataclass(frozen=True, eq=False)
class ObjectiveEval:
    value: float
    grad: np.ndarray
    explicit_wgrad: np.ndarray


# theta / weight level primitives, usable without a fitted model


def _pair_prob(theta: np.ndarray) -> np.ndarray:
    return expit(theta[:, None] - theta[None, :])


def _rho2(theta: np.ndarray, pair_w: np.ndarray) -> np.ndarray:
    p = _pair_prob(theta)
    return (pair_w * p * (1.0 - p)).sum(axis=1)


def _check_rho(obj: Objective, rho2: np.ndarray) -> None:
    players = [obj.i] if obj.kind == "ci_player" else range(len(rho2))
    for k in players:
        if rho2[k] <= 0.0:
            raise IsolatedPlayerError(int(k))


def _tau_terms(obj: Objective, theta: np.ndarray):
    ref = np.asarray(obj.reference)
    n = len(ref)
    pos = np.arange(n)
    # s[a, b] = +1 when reference[a] precedes reference[b]
    s = np.sign(pos[None, :] - pos[:, None]).astype(float)
    diff = (theta[ref][:, None] - theta[ref][None, :]) / obj.temperature
    return ref, s, np.tanh(diff), 2.0 / (n * (n - 1))


def value_at(obj: Objective, theta: np.ndarray, pair_w: np.ndarray | None = None) -> float:
    theta = np.asarray(theta, dtype=float)
    if obj.kind == "gap":
        return float(theta[obj.i] - theta[obj.j])
    if obj.kind == "tau":
        _, s, th, norm = _tau_terms(obj, theta)
        return float(0.5 * norm * (s * th).sum())
    rho2 = _rho2(theta, pair_w)
    _check_rho(obj, rho2)
    if obj.kind == "ci_player":
        return float(1.0 / rho2[obj.i])
    return float((1.0 / rho2).sum())


def grad_at(obj: Objective, theta: np.ndarray, pair_w: np.ndarray | None = None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    m = len(theta)
    g = np.zeros(m)
    if obj.kind == "gap":
        g[obj.i] += 1.0
        g[obj.j] -= 1.0
        return g
    if obj.kind == "tau":
        ref, s, th, norm = _tau_terms(obj, theta)
        g[ref] = norm * (s * (1.0 - th**2)).sum(axis=1) / obj.temperature
        return g
    p = _pair_prob(theta)
    v = p * (1.0 - p)
    rho2 = (pair_w * v).sum(axis=1)
    _check_rho(obj, rho2)
    a = pair_w * v * (1.0 - 2.0 * p)
    if obj.kind == "ci_player":
        k = obj.i
        drho = -a[k].copy()
        drho[k] += a[k].sum()
        return -drho / rho2[k] ** 2
    c = 1.0 / rho2**2
    return -c * a.sum(axis=1) + a.T @ c


def explicit_wgrad_pairs(obj: Objective, theta: np.ndarray, pair_w: np.ndarray | None,
                         i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Explicit ``df/dw`` for (possibly hypothetical) directed rows ``(i, j)``."""
    i = np.asarray(i)
    j = np.asarray(j)
    if not obj.has_explicit_weight_term:
        return np.zeros(i.shape)
    rho2 = _rho2(theta, pair_w)
    _check_rho(obj, rho2)
    p = expit(theta[i] - theta[j])
    v = p * (1.0 - p)
    if obj.kind == "ci_player":
        touches = (i == obj.i) | (j == obj.i)
        return -v * touches / rho2[obj.i] ** 2
    c = 1.0 / rho2**2
    return -v * (c[i] + c[j])


# model level API


def evaluate(obj: Objective, m: FittedModel, d: ComparisonDataset | None = None) -> ObjectiveEval:
    """Value, theta-gradient and per-row explicit weight derivative at the fit."""
    pw = m.pair_weights if obj.has_explicit_weight_term else None
    return ObjectiveEval(
        value=value_at(obj, m.theta, pw),
        grad=grad_at(obj, m.theta, pw),
        explicit_wgrad=explicit_wgrad_pairs(obj, m.theta, pw, m.row_i, m.row_j),
    )


def grad(obj: Objective, m: FittedModel, d: ComparisonDataset | None = None) -> np.ndarray:
    return grad_at(obj, m.theta, m.pair_weights if obj.has_explicit_weight_term else None)


def explicit_wgrad(obj: Objective, m: FittedModel, d: ComparisonDataset | None, n: int) -> float:
    pw = m.pair_weights if obj.has_explicit_weight_term else None
    return float(explicit_wgrad_pairs(obj, m.theta, pw, m.row_i[n:n + 1], m.row_j[n:n + 1])[0])


def tau_discrete(order_a: Sequence[int], order_b: Sequence[int]) -> float:
    """Kendall's tau between two rankings of the same players (no ties)."""
    order_a = [int(k) for k in order_a]
    order_b = [int(k) for k in order_b]
    n = len(order_a)
    if n < 2:
        raise ValidationError("Kendall tau needs at least two players")
    if sorted(order_a) != sorted(order_b) or len(set(order_a)) != n:
        raise ValidationError("orders must be permutations of the same players")
    pos_b = {p: k for k, p in enumerate(order_b)}
    pb = np.array([pos_b[p] for p in order_a])
    upper = np.triu_indices(n, 1)
    agree = np.sign(pb[None, :] - pb[:, None])[upper]
    return float(agree.sum() / len(agree))


def restricted(order: Sequence[int], keep: Sequence[int] | set[int]) -> list[int]:
    keep = set(int(k) for k in keep)
    return [int(k) for k in order if int(k) in keep]
