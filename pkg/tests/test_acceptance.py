"""End-to-end acceptance checks, one test per criterion, each against an independent oracle."""

from __future__ import annotations

import itertools
import logging
import time

import numpy as np
import pytest
from scipy import linalg

from btaudit.audit import GAP_ZERO_TOL, ci_k_selection, combine_scores, player_removal, strict_ci_search, topk_search
from btaudit.bt_core import downdate_solve, fit, ranking
from btaudit.influence import Projector, predict_add, predict_drop, predict_flip
from btaudit.manipulate import ci_reduce, make_stream, run_stream, stream_targets
from btaudit.objectives import Objective, explicit_wgrad, grad_at, tau_discrete, value_at
from btaudit.synthetic import simulate

from .helpers import two_player, well_posed


@pytest.fixture(autouse=True)
def quiet_fit_warnings():
    # divergent refits inside exhaustive searches are expected and only logged
    logging.disable(logging.WARNING)
    yield
    logging.disable(logging.NOTSET)


def fd_grad(obj, theta, pw, h=1e-6):
    g = np.zeros_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (value_at(obj, theta + e, pw) - value_at(obj, theta - e, pw)) / (2 * h)
    return g


def test_two_player_closed_form(criterion):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        a, b = (int(x) for x in rng.integers(1, 60, size=2))
        m = fit(two_player(a, b))
        worst = max(worst, abs((m.theta[0] - m.theta[1]) - np.log(a / b)))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and elapsed < 1.0
    criterion(1, "two-player closed form", ok, f"max error {worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_gradient_suite(criterion):
    start = time.perf_counter()
    worst_grad = worst_w = 0.0
    for s in range(20):
        m_players = 3 + s % 8
        d = well_posed(m_players, 12 * m_players, seed=s, tie_rate=0.1)
        m = fit(d)
        pw = m.pair_weights
        objs = [Objective.gap(*ranking(m)[:2]), Objective.ci_player(s % m_players), Objective.ci_trace(),
                Objective.tau_from_model(m, 0.5)]
        for obj in objs:
            an = grad_at(obj, m.theta, pw)
            fd = fd_grad(obj, m.theta, pw)
            worst_grad = max(worst_grad, np.linalg.norm(an - fd) / max(np.linalg.norm(fd), 1e-12))
            if obj.has_explicit_weight_term:
                for n in (0, d.N // 2, d.N - 1):
                    h = 1e-5
                    up = d.pair_weight_matrix(np.where(np.arange(d.N) == n, d.weights + h, d.weights))
                    dn = d.pair_weight_matrix(np.where(np.arange(d.N) == n, d.weights - h, d.weights))
                    fd_w = (value_at(obj, m.theta, up) - value_at(obj, m.theta, dn)) / (2 * h)
                    an_w = explicit_wgrad(obj, m, d, n)
                    worst_w = max(worst_w, abs(an_w - fd_w) / max(abs(fd_w), 1e-12))
    elapsed = time.perf_counter() - start
    ok = worst_grad < 1e-5 and worst_w < 1e-4 and elapsed < 10.0
    criterion(2, "objective gradients", ok,
              f"theta rel err {worst_grad:.1e}, weight rel err {worst_w:.1e}, {elapsed:.2f}s")
    assert ok


def test_influence_fidelity(criterion):
    start = time.perf_counter()
    pred, exact, err_sn, err_if = [], [], [], []
    for s in range(20):
        rng = np.random.default_rng(s)
        d = simulate(int(rng.integers(4, 11)), 100, seed=s, tie_rate=0.1)
        m = fit(d)
        i, j = (int(x) for x in ranking(m)[:2])
        proj = Projector(m, Objective.gap(i, j))
        ids = np.arange(d.n_blocks)
        p_sn, _ = proj.drop_blocks(d, ids, "1sn")
        p_if, _ = proj.drop_blocks(d, ids, "if")
        g = m.theta[i] - m.theta[j]
        for b in ids:
            th = fit(d.drop_blocks([b]), theta0=m.theta).theta
            e = th[i] - th[j] - g
            pred.append(p_sn[b])
            exact.append(e)
            err_sn.append(abs(p_sn[b] - e))
            err_if.append(abs(p_if[b] - e))
    elapsed = time.perf_counter() - start
    corr = float(np.corrcoef(pred, exact)[0, 1])
    share = float(np.mean(np.array(err_sn) <= np.array(err_if)))
    ok = corr >= 0.95 and share >= 0.90 and elapsed < 60.0
    criterion(3, "drop influence fidelity", ok,
              f"corr {corr:.4f}, 1sN no worse than IF on {100 * share:.1f}% of {len(exact)} blocks, {elapsed:.1f}s")
    assert ok


def test_sherman_morrison(criterion):
    worst = 0.0
    for s in range(10):
        d = well_posed(3 + s % 8, 60, seed=s, tie_rate=0.1)
        m = fit(d)
        h_free = m.hessian[1:, 1:] + 1e-8 * np.eye(m.M - 1)
        for n in range(d.N):
            x = np.zeros(m.M)
            x[m.row_i[n]] += 1.0
            x[m.row_j[n]] -= 1.0
            dense = linalg.solve(h_free - m.weights[n] * m.v[n] * np.outer(x[1:], x[1:]), x[1:])
            sm = downdate_solve(m, n)[1:]
            worst = max(worst, np.linalg.norm(sm - dense) / np.linalg.norm(dense))
    ok = worst < 1e-8
    criterion(4, "Sherman-Morrison downdate", ok, f"max rel err {worst:.1e}")
    assert ok


def test_flip_identity(criterion):
    worst_id = worst_double = 0.0
    for s in range(10):
        d = well_posed(6, 60, seed=s, tie_rate=0.1)
        m = fit(d)
        for obj in (Objective.gap(0, 1), Objective.ci_trace(), Objective.tau_from_model(m)):
            proj = Projector(m, obj)
            for b in np.flatnonzero(d.outcome != 2):
                b = int(b)
                flip = predict_flip(m, obj, d, b).predicted_delta_f
                rev = 1 - int(d.outcome[b])
                add = predict_add(m, obj, d, (d.first[b], d.second[b], rev), "if").predicted_delta_f
                drop = predict_drop(m, obj, d, b, "if").predicted_delta_f
                worst_id = max(worst_id, abs(flip - (add + drop)))
                # flipping back adds the original rows and drops the reversed ones, all at the same fit
                rows = np.array(d.block_rows(b))
                ri, rj, y = d.row_i[rows], d.row_j[rows], d.row_y[rows]
                back_add, _, _ = proj.rows(ri, rj, y, 1.0, "if")
                back_drop, _, _ = proj.rows(ri, rj, 1.0 - y, -1.0, "if")
                worst_double = max(worst_double, abs(flip + back_add.sum() + back_drop.sum()))
    ok = worst_id == 0.0 and worst_double < 1e-12
    criterion(5, "flip decomposition", ok, f"identity gap {worst_id:.1e}, double-flip |df| {worst_double:.1e}")
    assert ok


def test_tau_surrogate_limit(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        m_players = int(rng.integers(3, 12))
        # cumulative spacings of at least 0.1 keep every pairwise gap at or above 0.1
        theta = rng.permutation(np.cumsum(rng.uniform(0.1, 0.6, m_players)))
        reference = rng.permutation(m_players)
        obj = Objective.tau(reference, 1e-3)
        worst = max(worst, abs(value_at(obj, theta) - tau_discrete(ranking(theta), reference)))
    ok = worst < 1e-3
    criterion(6, "tau surrogate at T=1e-3", ok, f"max |f_tau - tau| {worst:.1e}")
    assert ok


def exhaustive_min_drops(d, i, j, limit):
    g = fit(d).theta[i] - fit(d).theta[j]
    active = np.flatnonzero(d.block_active)
    for size in range(1, limit + 1):
        for combo in itertools.combinations(active, size):
            th = fit(d.drop_blocks(combo)).theta
            # an exact tie counts as crossing the boundary
            if np.sign(g) * (th[i] - th[j]) <= GAP_ZERO_TOL:
                return size
    return None


def test_greedy_minimality(criterion):
    below_min_robust = checked = trivial = 0
    for s in range(10):
        d = well_posed(8, 120, seed=700 + s, tie_rate=0.1)
        for action in ("drop", "flip"):
            res = topk_search(d, 1, action, budget_fraction=0.3)
            assert res.succeeded
            if res.min_actions == 1:
                # a zero budget is the unperturbed fit, robust by definition
                trivial += 1
                continue
            checked += 1
            below_min_robust += not topk_search(d, 1, action, budget=res.min_actions - 1).succeeded
    bounded = small = 0
    for s in range(10):
        d = well_posed(4, 10, seed=900 + s, tie_rate=0.1)
        assert d.n_blocks <= 12
        res = topk_search(d, 1, "drop", budget=d.n_blocks)
        if res.succeeded:
            small += 1
            true_min = exhaustive_min_drops(d, *res.boundary_pair, res.min_actions)
            bounded += true_min is not None and true_min <= res.min_actions
    ok = below_min_robust == checked and checked >= 10 and bounded == small and small >= 5
    criterion(7, "greedy minimality", ok,
              f"budget min-1 robust on {below_min_robust}/{checked} searches ({trivial} more had min 1); "
              f"exhaustive bound holds on {bounded}/{small} small instances")
    assert ok


def test_score_arithmetic(criterion):
    r = combine_scores(0.001, 0.976, 0.993)
    identity = abs(r.r_all - (0.001 + 0.976 + 0.993) / 3)
    ok = identity < 1e-12 and abs(r.r_all - 0.656) <= 1e-3
    criterion(8, "robustness score mean", ok, f"r_all {r.r_all:.5f}, |r_all - 0.656| = {abs(r.r_all - 0.656):.5f} <= 0.001 "
              f"(exact mean rounds to {r.r_all:.3f})")
    assert ok


def test_strict_ci_dominance(criterion):
    held = 0
    rows = []
    for s in range(10):
        d = well_posed(8, 100, seed=300 + s, spread=0.7, tie_rate=0.1)
        k, i, j, _ = ci_k_selection(d)
        strict = strict_ci_search(d, k, (i, j), "drop", budget_fraction=0.3)
        point = topk_search(d, k, "drop", budget=strict.budget, pairs=[(i, j)])
        s_min = strict.min_actions if strict.succeeded else np.inf
        p_min = point.min_actions if point.succeeded else np.inf
        held += s_min >= p_min
        rows.append(f"{p_min}/{s_min}")
    ok = held == 10
    criterion(9, "strict CI dominance", ok, f"{held}/10 instances, point/strict mins {' '.join(rows)}")
    assert ok


def test_manipulation_head_to_head(criterion):
    inf, rig = [], []
    for s in range(50):
        d = well_posed(10, 100, seed=s)
        m = fit(d)
        k, target = stream_targets(m, "promote")[s % 3]
        stream = make_stream(10, 120, seed=1000 + s)
        inf.append(run_stream(d, "influence", target, "promote", k, stream, model=m).actions_used)
        rig.append(run_stream(d, "rigging", target, "promote", k, stream, model=m).actions_used)
    ok = np.mean(inf) < np.mean(rig)
    criterion(10, "targeted promotion", ok,
              f"mean interventions influence {np.mean(inf):.2f} vs rigging {np.mean(rig):.2f} "
              f"({100 * (1 - np.mean(inf) / np.mean(rig)):.0f}% fewer)")
    assert ok


def test_ci_reduction_ordering(criterion):
    pct = {p: [] for p in ("influence", "arena_active", "random")}
    for s in range(9):
        d = simulate(20, 1000, seed=100 + s)
        order = ranking(fit(d))
        target = int(order[(2, 10, 17)[s % 3]])
        for policy in pct:
            pct[policy].append(ci_reduce(d, target, 12, "add-pairs", policy, seed=s).pct_change)
    mean = {p: float(np.mean(v)) for p, v in pct.items()}
    ok = mean["influence"] <= mean["arena_active"] <= mean["random"] + 0.05
    criterion(11, "CI reduction ordering", ok,
              " ".join(f"{p} {v:+.2f}%" for p, v in mean.items()))
    assert ok


def test_player_removal_prediction(criterion):
    errs = []
    for s in range(10):
        d = well_posed(12, 200, seed=s)
        for r in player_removal(d, top_n=3)[:3]:
            errs.append(abs(r.predicted_delta_tau - r.exact_delta_tau))
    ok = max(errs) <= 0.1
    criterion(12, "player removal tau shift", ok, f"max abs error {max(errs):.3f} over {len(errs)} removals")
    assert ok
