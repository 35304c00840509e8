"""Weighted Bradley-Terry fit with player 0 pinned at zero.

The free parameters are ``theta[1:]``; every Hessian solve works on that
``(M-1) x (M-1)`` block and re-inserts a zero for the pinned coordinate.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import expit
from scipy.stats import norm

from .dataset import ComparisonDataset, component_count
from .errors import (
    IsolatedPlayerError,
    LeverageSaturationError,
    NonConvergenceError,
    SolveError,
    ValidationError,
)

log = logging.getLogger(__name__)

STABILIZATION_RIDGE = 1e-8
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100
SATURATION_EPS = 1e-9

CI_METHODS = ("local_info", "sandwich", "information")


def _hessian(m: int, row_i: np.ndarray, row_j: np.ndarray, wv: np.ndarray) -> np.ndarray:
    diag = np.bincount(row_i, weights=wv, minlength=m) + np.bincount(row_j, weights=wv, minlength=m)
    off = np.bincount(row_i * m + row_j, weights=wv, minlength=m * m).reshape(m, m)
    h = -(off + off.T)
    h[np.diag_indices(m)] += diag
    return h


def _score(m: int, row_i: np.ndarray, row_j: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Sum of ``c_n * x_n`` with ``x_n = e_i - e_j``."""
    return np.bincount(row_i, weights=c, minlength=m) - np.bincount(row_j, weights=c, minlength=m)


def _loss(theta, row_i, row_j, y, w, ridge):
    s = theta[row_i] - theta[row_j]
    # -y log p - (1-y) log(1-p), stable for both signs
    nll = y * np.logaddexp(0.0, -s) + (1.0 - y) * np.logaddexp(0.0, s)
    return float(w @ nll) + 0.5 * ridge * float(theta[1:] @ theta[1:])


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Fitted skills plus the per-row caches influence scoring needs."""

    theta: np.ndarray
    hessian: np.ndarray
    row_i: np.ndarray
    row_j: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    p: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    ridge: float
    tol: float
    connected: bool

    @property
    def M(self) -> int:
        return len(self.theta)

    @property
    def N(self) -> int:
        return len(self.p)

    @property
    def r(self) -> np.ndarray:
        return self.y - self.p

    @property
    def v(self) -> np.ndarray:
        return self.p * (1.0 - self.p)

    @cached_property
    def _factor(self):
        free = self.hessian[1:, 1:] + STABILIZATION_RIDGE * np.eye(self.M - 1)
        try:
            return linalg.cho_factor(free, lower=True, check_finite=True)
        except linalg.LinAlgError as exc:
            raise SolveError(f"free-block Hessian is not positive definite: {exc}") from None

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``H^{-1} b`` on the free block (stabilized), zero at the pinned coordinate.

        ``b`` may be a vector of length ``M`` or an ``M x K`` matrix.
        """
        b = np.asarray(b, dtype=float)
        out = np.zeros_like(b)
        out[1:] = linalg.cho_solve(self._factor, b[1:])
        return out

    @cached_property
    def hessian_inverse(self) -> np.ndarray:
        inv = self.solve(np.eye(self.M))
        inv[0, :] = 0.0
        return 0.5 * (inv + inv.T)

    def quad(self, i: np.ndarray | int, j: np.ndarray | int) -> np.ndarray:
        """``x^T H^{-1} x`` for ``x = e_i - e_j`` (vectorised over index arrays)."""
        hi = self.hessian_inverse
        return hi[i, i] + hi[j, j] - 2.0 * hi[i, j]

    @cached_property
    def pair_weights(self) -> np.ndarray:
        m = self.M
        flat = np.bincount(self.row_i * m + self.row_j, weights=self.weights, minlength=m * m).reshape(m, m)
        return flat + flat.T


def _effective_tol(tol: float, w: np.ndarray) -> float:
    # gradient sums of O(N) terms cannot resolve below a few ulps of the total weight
    return max(tol, 64 * np.finfo(float).eps * max(1.0, float(w.sum())))


def mle_exists(m: int, row_i: np.ndarray, row_j: np.ndarray, y: np.ndarray, w: np.ndarray) -> bool:
    """Finite MLE check: within each component every player must both beat and lose to the rest.

    Equivalent to the "i scored against j" digraph having the same
    components as the undirected comparison graph.
    """
    act = (w > 0) & (y > 0)
    g = csr_matrix((np.ones(int(act.sum())), (row_j[act], row_i[act])), shape=(m, m))
    n_strong = connected_components(g, directed=True, connection="strong")[0]
    return n_strong == component_count(m, row_i, row_j, w)


def _newton(m, row_i, row_j, y, w, ridge, stab, tol, max_iter, theta0):
    theta = np.zeros(m) if theta0 is None else np.array(theta0, dtype=float)
    theta[0] = 0.0
    tol_eff = _effective_tol(tol, w)
    loss = _loss(theta, row_i, row_j, y, w, ridge)
    eye = np.eye(m - 1)
    grad_norm = np.inf
    for it in range(max_iter + 1):
        p = expit(theta[row_i] - theta[row_j])
        grad = _score(m, row_i, row_j, w * (p - y)) + ridge * theta
        grad_norm = float(np.max(np.abs(grad[1:])))
        if grad_norm <= tol_eff:
            break
        if it == max_iter:
            raise NonConvergenceError(f"Newton did not converge in {max_iter} iterations", grad_norm)
        h = _hessian(m, row_i, row_j, w * p * (1.0 - p))[1:, 1:] + (ridge + stab) * eye
        try:
            with warnings.catch_warnings():
                # divergent skills make h nearly singular; mle_exists already warned
                warnings.simplefilter("ignore", linalg.LinAlgWarning)
                step = linalg.solve(h, grad[1:], assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = linalg.lstsq(h, grad[1:])[0]
        t = 1.0
        while True:
            cand = theta.copy()
            cand[1:] -= t * step
            new_loss = _loss(cand, row_i, row_j, y, w, ridge)
            if new_loss <= loss + 1e-12 * (1.0 + abs(loss)) or t < 1e-10:
                break
            t *= 0.5
        theta, loss = cand, new_loss
    return theta, it, grad_norm


def fit(
    d: ComparisonDataset,
    weights: np.ndarray | None = None,
    ridge: float = 0.0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    theta0: np.ndarray | None = None,
) -> FittedModel:
    """Minimise weighted binary cross-entropy over ``theta[1:]`` by damped Newton.

    ``ridge`` adds ``ridge/2 * ||theta||^2`` to the objective (and ``ridge * I``
    to the stored Hessian). Disconnected graphs get a ``1e-8`` stabilisation
    ridge inside the Newton solves so the step stays defined.
    """
    m = d.M
    if m < 2:
        raise ValidationError("fitting needs at least two players")
    if d.N < 1:
        raise ValidationError("fitting needs at least one comparison")
    if ridge < 0:
        raise ValidationError("ridge must be nonnegative")
    w = d.weights if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (d.N,):
        raise ValidationError(f"expected {d.N} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise ValidationError("weights must be nonnegative")
    row_i, row_j, y = d.row_i, d.row_j, d.row_y
    connected = component_count(m, row_i, row_j, w) == 1
    stab = 0.0 if connected else STABILIZATION_RIDGE
    if not connected:
        log.warning("comparison graph is disconnected; skills are only identified within components")
    if ridge == 0 and not mle_exists(m, row_i, row_j, y, w):
        log.warning("some group of players never loses (or never wins) against the rest; "
                    "their skills diverge and the fit stops where the gradient vanishes numerically")
    try:
        theta, it, grad_norm = _newton(m, row_i, row_j, y, w, ridge, stab, tol, max_iter, theta0)
    except NonConvergenceError:
        if theta0 is None:
            raise
        # a far-off warm start (e.g. a previously divergent skill) can stall; retry cold
        theta, it, grad_norm = _newton(m, row_i, row_j, y, w, ridge, stab, tol, max_iter, None)
    tol_eff = _effective_tol(tol, w)

    p = expit(theta[row_i] - theta[row_j])
    hess = _hessian(m, row_i, row_j, w * p * (1.0 - p))
    hess[np.diag_indices(m)] += ridge
    return FittedModel(
        theta=theta,
        hessian=hess,
        row_i=row_i,
        row_j=row_j,
        y=y,
        weights=w,
        p=p,
        converged=True,
        iterations=it,
        grad_norm=grad_norm,
        ridge=ridge,
        tol=tol_eff,
        connected=connected,
    )


def probability(m: FittedModel, i: int, j: int) -> float:
    return float(expit(m.theta[i] - m.theta[j]))


def leverage(m: FittedModel, n: int, check_saturation: bool = False) -> float:
    """Curvature share ``h_n = w_n v_n x_n^T H^{-1} x_n`` of row ``n``."""
    h = float(m.weights[n] * m.v[n] * m.quad(m.row_i[n], m.row_j[n]))
    if check_saturation and h >= 1.0 - SATURATION_EPS:
        raise LeverageSaturationError(n, h)
    return h


def leverages(m: FittedModel) -> np.ndarray:
    return m.weights * m.v * m.quad(m.row_i, m.row_j)


def downdate_solve(m: FittedModel, n: int) -> np.ndarray:
    """``(H - w_n v_n x_n x_n^T)^{-1} x_n`` via Sherman-Morrison, pinned coordinate zero."""
    x = np.zeros(m.M)
    x[m.row_i[n]] += 1.0
    x[m.row_j[n]] -= 1.0
    return m.solve(x) / (1.0 - leverage(m, n, check_saturation=True))


def local_info_all(m: FittedModel) -> np.ndarray:
    """Local information ``sum_j w_ij p_ij (1 - p_ij)`` for every player."""
    p = expit(m.theta[:, None] - m.theta[None, :])
    return (m.pair_weights * p * (1.0 - p)).sum(axis=1)


def local_info(m: FittedModel, d: ComparisonDataset, i: int) -> float:
    rho2 = float(local_info_all(m)[i])
    if rho2 <= 0.0:
        raise IsolatedPlayerError(i)
    return rho2


def z_value(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValidationError("confidence level must lie in (0, 1)")
    return float(norm.ppf(1.0 - (1.0 - level) / 2.0))


def information_covariance(m: FittedModel) -> np.ndarray:
    """``J^{-1}`` with ``J`` the weighted Fisher information (plus fit ridge)."""
    return _free_inverse(m.hessian)


def sandwich_covariance(m: FittedModel) -> np.ndarray:
    """``J^{-1} S J^{-1}`` with ``S`` the sum of weighted score outer products."""
    jinv = _free_inverse(m.hessian)
    c = m.p - m.y
    x = np.zeros((m.N, m.M))
    rows = np.arange(m.N)
    x[rows, m.row_i] = c
    x[rows, m.row_j] = -c
    s = (x * m.weights[:, None]).T @ x
    return jinv @ s @ jinv


def _free_inverse(h: np.ndarray) -> np.ndarray:
    out = np.zeros_like(h)
    try:
        factor = linalg.cho_factor(h[1:, 1:], lower=True)
    except linalg.LinAlgError:
        raise SolveError("information matrix is singular; refit with a positive ridge") from None
    out[1:, 1:] = linalg.cho_solve(factor, np.eye(len(h) - 1))
    return out


def standard_errors(m: FittedModel, method: str = "local_info") -> np.ndarray:
    if method == "local_info":
        bad = np.flatnonzero(m.pair_weights.sum(axis=1) <= 0.0)
        if len(bad):
            raise IsolatedPlayerError(int(bad[0]))
        # information underflows to zero only for divergent skills; report an infinite SE
        with np.errstate(divide="ignore"):
            return 1.0 / np.sqrt(local_info_all(m))
    if method == "sandwich":
        cov = sandwich_covariance(m)
    elif method == "information":
        cov = information_covariance(m)
    else:
        raise ValidationError(f"unknown CI method {method!r}; expected one of {CI_METHODS}")
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


def confidence_intervals(
    m: FittedModel, d: ComparisonDataset | None = None, level: float = 0.95, method: str = "local_info"
) -> list[ConfidenceInterval]:
    z = z_value(level)
    se = standard_errors(m, method)
    return [ConfidenceInterval(float(t - z * s), float(t + z * s), level) for t, s in zip(m.theta, se)]


def ranking(m: FittedModel | np.ndarray) -> np.ndarray:
    """Player indices by descending skill; equal skills keep ascending index order."""
    theta = m.theta if isinstance(m, FittedModel) else np.asarray(m)
    return np.lexsort((np.arange(len(theta)), -theta))


def rank_positions(order: np.ndarray) -> np.ndarray:
    """Inverse permutation: ``pos[player]`` is the 0-based rank of ``player``."""
    pos = np.empty(len(order), dtype=np.int64)
    pos[order] = np.arange(len(order))
    return pos
