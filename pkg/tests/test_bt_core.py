from __future__ import annotations

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from btaudit.bt_core import (
    confidence_intervals,
    downdate_solve,
    fit,
    information_covariance,
    leverage,
    leverages,
    local_info,
    mle_exists,
    probability,
    rank_positions,
    ranking,
    sandwich_covariance,
    standard_errors,
    z_value,
)
from btaudit.dataset import Outcome, from_arrays
from btaudit.errors import NonConvergenceError, SolveError, ValidationError
from btaudit.synthetic import simulate

from .helpers import two_player, well_posed


def test_two_player_closed_form(ab31):
    m = fit(ab31)
    assert m.theta[0] == 0.0
    assert m.theta[1] == pytest.approx(-math.log(3), abs=1e-10)
    assert m.grad_norm <= m.tol


def test_symmetric_and_all_ties():
    assert np.allclose(fit(two_player(1, 1)).theta, 0.0, atol=1e-12)
    ties = from_arrays(4, [0, 1, 2, 3, 0], [1, 2, 3, 0, 2], [2] * 5)
    assert np.allclose(fit(ties).theta, 0.0, atol=1e-12)


def test_probability_values(ab31):
    m = fit(ab31)
    assert probability(m, 0, 1) == pytest.approx(0.75, abs=1e-10)
    assert probability(m, 1, 0) == pytest.approx(0.25, abs=1e-10)
    assert probability(m, 0, 0) == 0.5


def test_local_info_and_se(ab31):
    m = fit(ab31)
    assert local_info(m, ab31, 0) == pytest.approx(1.5, rel=1e-9)
    se = standard_errors(m)
    assert se[0] == pytest.approx(1 / math.sqrt(1.5), rel=1e-9)
    assert z_value(0.95) == pytest.approx(1.959964, abs=1e-6)
    ci = confidence_intervals(m, ab31, 0.95)
    assert ci[0].width == pytest.approx(2 * 1.959964 * se[0], rel=1e-6)
    doubled = fit(ab31.with_weights(2 * ab31.weights))
    assert local_info(doubled, ab31, 0) == pytest.approx(3.0, rel=1e-9)


def test_leverage_golden_two_player(ab31):
    m = fit(ab31)
    # free block is 1x1: H = sum_n w v = 8 * 3/16; each row's h = v / H
    assert leverage(m, 0) == pytest.approx((3 / 16) / 1.5, rel=1e-6)
    assert np.allclose(leverages(m), 0.125, rtol=1e-6)


def test_leverage_halves_under_duplication():
    d = well_posed(3, 20, seed=1)
    dup = from_arrays(3, np.tile(d.first, 2), np.tile(d.second, 2), np.tile(d.outcome, 2))
    h1 = leverages(fit(d))
    h2 = leverages(fit(dup))[: d.N]
    assert np.allclose(h2, h1 / 2, rtol=1e-6)


def test_sherman_morrison_matches_dense(toy):
    m = fit(toy)
    for n in range(0, toy.N, 7):
        x = np.zeros(m.M)
        x[m.row_i[n]] += 1
        x[m.row_j[n]] -= 1
        h = m.hessian[1:, 1:] + 1e-8 * np.eye(m.M - 1) - m.weights[n] * m.v[n] * np.outer(x[1:], x[1:])
        dense = linalg.solve(h, x[1:])
        assert np.allclose(downdate_solve(m, n)[1:], dense, rtol=1e-8, atol=1e-12)


def test_ranking_tie_break():
    assert ranking(np.zeros(4)).tolist() == [0, 1, 2, 3]
    assert ranking(np.array([0.0, -1.0986])).tolist() == [0, 1]
    order = ranking(np.array([0.0, 2.0, 2.0, -1.0]))
    assert order.tolist() == [1, 2, 0, 3]
    assert rank_positions(order).tolist() == [2, 0, 1, 3]


def test_errors():
    with pytest.raises(ValidationError):
        fit(from_arrays(1, [], [], []))
    d = simulate(6, 60, seed=2)
    with pytest.raises(NonConvergenceError) as exc:
        fit(d, max_iter=1)
    assert exc.value.grad_norm > 0


def test_disconnected_fit_and_singular_information(caplog):
    d = from_arrays(4, [0, 0, 2, 2], [1, 1, 3, 3], [0, 1, 0, 1])
    with caplog.at_level(logging.WARNING):
        m = fit(d)
    assert not m.connected
    assert "disconnected" in caplog.text
    assert np.allclose(m.theta, 0.0, atol=1e-6)
    with pytest.raises(SolveError):
        information_covariance(m)


def test_divergent_skill_warns(caplog):
    d = from_arrays(3, [0, 0, 1, 1], [1, 2, 2, 2], [0, 0, 0, 1])
    assert not mle_exists(d.M, d.row_i, d.row_j, d.row_y, d.weights)
    with caplog.at_level(logging.WARNING):
        fit(d)
    assert "never loses" in caplog.text
    assert mle_exists(*(lambda e: (e.M, e.row_i, e.row_j, e.row_y, e.weights))(well_posed(5, 60, seed=0)))


def test_warm_start_recovers_from_divergent_start():
    d = well_posed(4, 40, seed=5)
    far = np.array([0.0, 40.0, -40.0, 40.0])
    assert np.allclose(fit(d, theta0=far).theta, fit(d).theta, atol=1e-7)


def test_ridge_penalty_shrinks(toy):
    plain, ridged = fit(toy), fit(toy, ridge=5.0)
    assert np.abs(ridged.theta[1:]).sum() < np.abs(plain.theta[1:]).sum()
    g = ridged.hessian[1:, 1:] - fit(toy, ridge=0.0).hessian[1:, 1:]
    assert np.all(np.diag(g) > 0)


def test_pinned_sandwich_se_zero(toy):
    se = standard_errors(fit(toy), "sandwich")
    assert se[0] == 0.0 and np.all(se[1:] > 0)


def test_sandwich_close_to_information_when_well_specified():
    rng = np.random.default_rng(0)
    theta = rng.normal(0, 0.7, 5)
    d = simulate(5, 10 * 300, seed=11, theta=theta)
    m = fit(d)
    info = np.sqrt(np.diag(information_covariance(m)))[1:]
    sand = np.sqrt(np.diag(sandwich_covariance(m)))[1:]
    assert np.all(np.abs(sand - info) / info < 0.25)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.permutations(range(5)))
def test_label_permutation_equivariance(seed, perm):
    d = well_posed(5, 50, seed=seed)
    perm = np.array(perm)
    # keep player 0 fixed so the pin refers to the same player
    perm = np.concatenate([[0], perm[perm != 0]])
    inv = np.argsort(perm)
    e = from_arrays(5, inv[d.first], inv[d.second], d.outcome)
    a, b = fit(d), fit(e)
    assert np.allclose(b.theta[inv], a.theta, atol=1e-7)
    assert np.array_equal(perm[ranking(b)], ranking(a)) or np.allclose(np.diff(np.sort(a.theta)), 0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_fit_invariants(seed):
    d = well_posed(6, 60, seed=seed, tie_rate=0.2)
    m = fit(d)
    assert m.theta[0] == 0.0
    assert np.all((m.p > 0) & (m.p < 1))
    assert np.allclose(m.hessian, m.hessian.T)
    assert m.grad_norm <= m.tol
    i, j = 1, 2
    assert probability(m, i, j) + probability(m, j, i) == pytest.approx(1.0, abs=1e-15)
