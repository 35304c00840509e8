from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from btaudit.bt_core import fit, ranking
from btaudit.errors import IsolatedPlayerError, ValidationError
from btaudit.objectives import (
    Objective,
    evaluate,
    explicit_wgrad,
    explicit_wgrad_pairs,
    grad_at,
    restricted,
    tau_discrete,
    value_at,
)

from .helpers import well_posed


def fd_grad(obj, theta, pw, h=1e-5):
    g = np.zeros_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (value_at(obj, theta + e, pw) - value_at(obj, theta - e, pw)) / (2 * h)
    return g


def all_objectives(m):
    order = ranking(m)
    return [
        Objective.gap(int(order[0]), int(order[-1])),
        Objective.ci_player(int(order[1])),
        Objective.ci_trace(),
        Objective.tau(order, 0.5),
    ]


def test_examples(ab31):
    m = fit(ab31)
    assert evaluate(Objective.gap(0, 1), m).value == pytest.approx(math.log(3), rel=1e-9)
    assert evaluate(Objective.ci_player(0), m).value == pytest.approx(1 / 1.5, rel=1e-9)
    assert explicit_wgrad(Objective.ci_player(0), m, ab31, 0) == pytest.approx(-1 / 12, rel=1e-9)
    assert explicit_wgrad(Objective.gap(0, 1), m, ab31, 0) == 0.0
    tau = Objective.tau([0, 1], temperature=0.3)
    assert value_at(tau, np.array([0.3, 0.0])) == pytest.approx(math.tanh(1.0), rel=1e-12)


def test_gap_gradient_unit_vector():
    g = grad_at(Objective.gap(2, 5), np.zeros(8))
    assert g.tolist() == [0, 0, 1, 0, 0, -1, 0, 0]


def test_ci_player_explicit_zero_off_target(toy):
    m = fit(toy)
    obj = Objective.ci_player(0)
    ev = evaluate(obj, m)
    touches = (m.row_i == 0) | (m.row_j == 0)
    assert np.all(ev.explicit_wgrad[~touches] == 0)
    assert np.all(ev.explicit_wgrad[touches] < 0)


def test_validation():
    with pytest.raises(ValidationError):
        Objective.gap(1, 1)
    with pytest.raises(ValidationError):
        Objective.tau([0], 0.5)
    with pytest.raises(ValidationError):
        Objective.tau([0, 1], 0.0)
    with pytest.raises(ValidationError):
        tau_discrete([0], [0])


def test_isolated_player_error():
    pw = np.zeros((3, 3))
    pw[0, 1] = pw[1, 0] = 2
    with pytest.raises(IsolatedPlayerError):
        value_at(Objective.ci_player(2), np.zeros(3), pw)
    with pytest.raises(IsolatedPlayerError):
        value_at(Objective.ci_trace(), np.zeros(3), pw)


def test_tau_discrete_examples():
    assert tau_discrete([0, 1, 2, 3], [0, 1, 2, 3]) == 1.0
    assert tau_discrete([0, 1, 2, 3], [3, 2, 1, 0]) == -1.0
    assert tau_discrete([1, 0, 2], [0, 1, 2]) == pytest.approx(1 / 3)
    assert restricted([3, 1, 0, 2], {0, 2, 3}) == [3, 0, 2]


@settings(max_examples=40, deadline=None)
@given(st.permutations(range(6)), st.permutations(range(6)))
def test_tau_discrete_brute_force(a, b):
    pos_a = {p: k for k, p in enumerate(a)}
    pos_b = {p: k for k, p in enumerate(b)}
    s = sum(np.sign(pos_a[x] - pos_a[y]) * np.sign(pos_b[x] - pos_b[y]) for x, y in itertools.combinations(range(6), 2))
    assert tau_discrete(a, b) == pytest.approx(s / 15)
    assert tau_discrete(a, b) == tau_discrete(b, a)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_gradients_match_finite_differences(seed):
    d = well_posed(int(3 + seed % 6), 70, seed=seed, tie_rate=0.1)
    m = fit(d)
    for obj in all_objectives(m):
        ev = evaluate(obj, m)
        fd = fd_grad(obj, m.theta, m.pair_weights)
        assert np.linalg.norm(ev.grad - fd) <= 1e-5 * max(1e-8, np.linalg.norm(fd)) + 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_explicit_weight_derivative_matches_fd(seed):
    d = well_posed(5, 50, seed=seed)
    m = fit(d)
    for obj in (Objective.ci_player(1), Objective.ci_trace()):
        for n in (0, 3, d.N - 1):
            h = 1e-5
            up = d.pair_weight_matrix(np.where(np.arange(d.N) == n, d.weights + h, d.weights))
            dn = d.pair_weight_matrix(np.where(np.arange(d.N) == n, d.weights - h, d.weights))
            fd = (value_at(obj, m.theta, up) - value_at(obj, m.theta, dn)) / (2 * h)
            an = explicit_wgrad(obj, m, d, n)
            assert abs(an - fd) <= 1e-4 * max(abs(fd), 1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5))
def test_translation_invariance_and_tau_grad_sum(seed, c):
    d = well_posed(5, 50, seed=seed)
    m = fit(d)
    for obj in all_objectives(m):
        pw = m.pair_weights
        assert value_at(obj, m.theta + c, pw) == pytest.approx(value_at(obj, m.theta, pw), rel=1e-9, abs=1e-12)
    tau = Objective.tau(ranking(m), 0.5)
    assert abs(grad_at(tau, m.theta).sum()) < 1e-12


def test_tau_surrogate_bounded(toy):
    m = fit(toy)
    obj = Objective.tau(ranking(m), 0.01)
    assert -1 <= value_at(obj, m.theta) <= 1


def test_explicit_pairs_trace_negative_for_new_rows(toy):
    m = fit(toy)
    ex = explicit_wgrad_pairs(Objective.ci_trace(), m.theta, m.pair_weights, np.array([0, 1]), np.array([2, 3]))
    assert np.all(ex < 0)
