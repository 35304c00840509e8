from __future__ import annotations

import numpy as np

from btaudit.bt_core import mle_exists
from btaudit.dataset import Outcome, from_arrays
from btaudit.synthetic import simulate


def two_player(wins_a: int, wins_b: int, ties: int = 0):
    """Player 0 beats player 1 ``wins_a`` times and loses ``wins_b`` times."""
    n = wins_a + wins_b + ties
    outcome = [Outcome.FIRST_WINS] * wins_a + [Outcome.SECOND_WINS] * wins_b + [Outcome.TIE] * ties
    return from_arrays(2, np.zeros(n, int), np.ones(n, int), np.array(outcome, int), names=["A", "B"])


def well_posed(m: int, n: int, seed: int, spread: float = 1.0, tie_rate: float = 0.0, max_tries: int = 50):
    """A simulated dataset whose maximum-likelihood skills are finite."""
    for t in range(max_tries):
        d = simulate(m, n, seed=seed + 7919 * t, spread=spread, tie_rate=tie_rate)
        if mle_exists(d.M, d.row_i, d.row_j, d.row_y, d.weights):
            return d
    raise RuntimeError("could not draw a well-posed dataset")
