"""Seeded Bradley-Terry simulators for tests and experiments."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .dataset import ComparisonDataset, Outcome, from_arrays
from .errors import ValidationError


def simulate(
    m: int,
    n_comparisons: int,
    seed: int = 0,
    spread: float = 1.0,
    tie_rate: float = 0.0,
    theta: np.ndarray | None = None,
    ensure_connected: bool = True,
) -> ComparisonDataset:
    """Draw ``n_comparisons`` raw matches over uniformly chosen pairs.

    Skills default to ``N(0, spread^2)``. A fraction ``tie_rate`` of matches is
    recorded as a tie; the rest follow the BT win probability. With
    ``ensure_connected`` a spanning path ``0-1-...-(m-1)`` is included first.
    """
    if m < 2:
        raise ValidationError("need at least two players")
    rng = np.random.default_rng(seed)
    theta = rng.normal(0.0, spread, m) if theta is None else np.asarray(theta, dtype=float)
    first, second = [], []
    if ensure_connected:
        perm = rng.permutation(m)
        first.extend(perm[:-1])
        second.extend(perm[1:])
    rest = max(0, n_comparisons - len(first))
    pi, pj = np.triu_indices(m, 1)
    idx = rng.integers(len(pi), size=rest)
    swap = rng.random(rest) < 0.5
    first.extend(np.where(swap, pj[idx], pi[idx]))
    second.extend(np.where(swap, pi[idx], pj[idx]))
    first = np.asarray(first, dtype=np.int64)
    second = np.asarray(second, dtype=np.int64)
    win = rng.random(len(first)) < expit(theta[first] - theta[second])
    outcome = np.where(win, int(Outcome.FIRST_WINS), int(Outcome.SECOND_WINS))
    if tie_rate > 0:
        outcome = np.where(rng.random(len(first)) < tie_rate, int(Outcome.TIE), outcome)
    return from_arrays(m, first, second, outcome)
