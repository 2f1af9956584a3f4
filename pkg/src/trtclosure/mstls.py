"""Constrained modified sequential thresholding (MSTLS) with λ selection.

For a threshold λ the inner loop alternates a constrained least-squares solve
on the current support with the removal of coefficients outside the window

    L_k = λ·max(1, ‖b‖/‖G_k‖) ≤ |w_k| ≤ U_k = λ⁻¹·min(1, ‖b‖/‖G_k‖).

λ is chosen as the smallest minimizer over a grid of

    ℒ(λ) = ‖G(w(λ) − w(0))‖ / ‖G w(0)‖ + ‖w(λ)‖₀ / J,

with w(0) the constrained full-support solution.  The group variant shares
one support across several systems.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .qp import QPError, QPProblem, kkt_audit, qp_solve

__all__ = [
    "DEFAULT_LAMBDAS",
    "LinearConstraints",
    "SparsityPath",
    "threshold_bounds",
    "constrained_lstsq",
    "mstls_step",
    "select_lambda",
    "group_mstls",
    "MSTLSRegressor",
]

log = logging.getLogger(__name__)

#: Default λ grid: 100 log-spaced points on [1e-4, 1].
DEFAULT_LAMBDAS = np.logspace(-4, 0, 100)


@dataclass
class LinearConstraints:
    """Aw = 0 and Cw ≤ d on a coefficient vector of length ``n``."""

    n: int
    A: np.ndarray | None = None
    C: np.ndarray | None = None
    d: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.zeros((0, self.n)) if self.A is None else np.asarray(self.A, float).reshape(-1, self.n)
        if self.C is None:
            self.C = np.zeros((0, self.n))
            self.d = np.zeros(0)
        else:
            self.C = np.asarray(self.C, float).reshape(-1, self.n)
            self.d = np.zeros(self.C.shape[0]) if self.d is None else np.asarray(self.d, float).ravel()

    def restrict(self, support: np.ndarray) -> "LinearConstraints":
        """Constraints on the sub-vector indexed by ``support`` (others zero)."""
        A = self.A[:, support]
        C = self.C[:, support]
        keepA = np.any(A != 0, axis=1)
        keepC = np.any(C != 0, axis=1)
        return LinearConstraints(len(support), A[keepA], C[keepC], self.d[keepC])

    def residuals(self, w) -> tuple[float, float]:
        """(max |Aw|, max positive part of Cw − d)."""
        w = np.asarray(w, float)
        eq = float(np.max(np.abs(self.A @ w))) if self.A.shape[0] else 0.0
        ineq = float(max(0.0, np.max(self.C @ w - self.d))) if self.C.shape[0] else 0.0
        return eq, ineq


@dataclass
class SparsityPath:
    """Per-λ solutions, losses and supports of a threshold sweep."""

    lambdas: np.ndarray
    coefs: np.ndarray
    losses: np.ndarray
    supports: list
    w0: np.ndarray | None = None
    failures: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lambdas": self.lambdas.tolist(),
            "losses": [None if not np.isfinite(v) else float(v) for v in self.losses],
            "supports": [list(map(int, s)) for s in self.supports],
            "failures": {str(k): v for k, v in self.failures.items()},
        }


def threshold_bounds(G: np.ndarray, b: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper magnitude bounds (L_k, U_k) for every column."""
    norms = np.linalg.norm(G, axis=0)
    bn = np.linalg.norm(b)
    with np.errstate(divide="ignore"):
        ratio = np.where(norms > 0, bn / np.where(norms > 0, norms, 1.0), np.inf)
    return lam * np.maximum(1.0, ratio), np.minimum(1.0, ratio) / lam


def constrained_lstsq(G, b, cons: LinearConstraints | None, support=None, tol=1e-10, max_iter=1000):
    """QP solve restricted to ``support``; returns the full-length vector."""
    J = G.shape[1]
    support = np.arange(J) if support is None else np.asarray(support, dtype=int)
    w = np.zeros(J)
    if support.size == 0:
        return w, {}
    cons = LinearConstraints(J) if cons is None else cons
    sub = cons.restrict(support)
    res = qp_solve(QPProblem(G[:, support], b, sub.A, sub.C, sub.d, tol=tol, max_iter=max_iter))
    w[support] = res.w
    return w, res.kkt


def mstls_step(
    G: np.ndarray,
    b: np.ndarray,
    lam: float,
    cons: LinearConstraints | None = None,
    forced: Sequence[int] = (),
    w_init: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> tuple[np.ndarray, np.ndarray]:
    """Thresholded constrained least squares at one λ.

    Returns the coefficient vector and the final support (sorted indices).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    J = G.shape[1]
    forced = np.asarray(sorted(set(int(i) for i in forced)), dtype=int)
    L, U = threshold_bounds(G, b, lam)
    support = np.arange(J)
    w = constrained_lstsq(G, b, cons, support, tol, max_iter)[0] if w_init is None else np.asarray(w_init, float)
    for _ in range(J + 1):
        aw = np.abs(w)
        keep = np.flatnonzero((aw >= L) & (aw <= U))
        keep = np.union1d(keep, forced).astype(int)
        keep = np.intersect1d(keep, support)
        if np.array_equal(keep, support):
            break
        support = keep
        w = constrained_lstsq(G, b, cons, support, tol, max_iter)[0]
    return w, support


def _loss(G, w, w0, Gw0_norm, J):
    return float(np.linalg.norm(G @ (w - w0)) / Gw0_norm + np.count_nonzero(w) / J)


def _smallest_minimizer(losses: np.ndarray, rtol: float = 1e-12) -> int:
    finite = np.isfinite(losses)
    if not np.any(finite):
        raise QPError("all threshold levels failed")
    best = np.min(losses[finite])
    return int(np.flatnonzero(finite & (losses <= best + rtol * max(1.0, abs(best))))[0])


def _map(fn, items, n_jobs):
    if n_jobs is None or n_jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, items))


def select_lambda(
    G: np.ndarray,
    b: np.ndarray,
    lambdas: Sequence[float] | None = None,
    cons: LinearConstraints | None = None,
    forced: Sequence[int] = (),
    tol: float = 1e-10,
    max_iter: int = 1000,
    n_jobs: int | None = None,
) -> tuple[float, np.ndarray, SparsityPath]:
    """Sweep ``lambdas`` and return (λ̂, w(λ̂), path)."""
    lambdas = np.sort(np.asarray(DEFAULT_LAMBDAS if lambdas is None else lambdas, dtype=float))
    if lambdas.size == 0:
        raise ValueError("empty lambda grid")
    J = G.shape[1]
    w0 = constrained_lstsq(G, b, cons, None, tol, max_iter)[0]
    Gw0 = max(np.linalg.norm(G @ w0), np.finfo(float).tiny)

    def run(lam):
        try:
            w, s = mstls_step(G, b, lam, cons, forced, w0, tol, max_iter)
            return w, s, _loss(G, w, w0, Gw0, J), None
        except QPError as exc:
            return np.full(J, np.nan), np.zeros(0, int), np.inf, str(exc)

    out = _map(run, lambdas, n_jobs)
    coefs = np.array([o[0] for o in out])
    losses = np.array([o[2] for o in out])
    failures = {float(l): o[3] for l, o in zip(lambdas, out) if o[3]}
    path = SparsityPath(lambdas, coefs, losses, [o[1] for o in out], w0, failures)
    k = _smallest_minimizer(losses)
    return float(lambdas[k]), coefs[k].copy(), path


def group_mstls(
    systems: Sequence[tuple[np.ndarray, np.ndarray]],
    constraints: Sequence[LinearConstraints | None] | None = None,
    lambdas: Sequence[float] | None = None,
    forced: Sequence[int] = (),
    tol: float = 1e-10,
    max_iter: int = 1000,
    n_jobs: int | None = None,
) -> tuple[float, list[np.ndarray], SparsityPath]:
    """Shared-support MSTLS over an ensemble of systems ``[(G_p, b_p), ...]``.

    A column is kept when Σ_p L_k^(p) ≤ Σ_p |w_k^(p)| ≤ Σ_p U_k^(p); the loss
    is the sum of the per-system losses.  Returns (λ̂, [w^(p)], path) where the
    path stores the stacked coefficients.
    """
    P = len(systems)
    if P == 0:
        raise ValueError("no systems")
    J = systems[0][0].shape[1]
    if any(G.shape[1] != J for G, _ in systems):
        raise ValueError("all systems must share one library")
    constraints = [None] * P if constraints is None else list(constraints)
    if len(constraints) != P:
        raise ValueError("one constraint set per system required")
    lambdas = np.sort(np.asarray(DEFAULT_LAMBDAS if lambdas is None else lambdas, dtype=float))
    forced = np.asarray(sorted(set(int(i) for i in forced)), dtype=int)

    def solve_all(support):
        return _map(
            lambda p: constrained_lstsq(systems[p][0], systems[p][1], constraints[p], support, tol, max_iter)[0],
            range(P),
            n_jobs,
        )

    w0 = solve_all(np.arange(J))
    Gw0 = [max(np.linalg.norm(G @ w), np.finfo(float).tiny) for (G, _), w in zip(systems, w0)]

    def run(lam):
        bounds = [threshold_bounds(G, b, lam) for G, b in systems]
        L = np.sum([bd[0] for bd in bounds], axis=0)
        U = np.sum([bd[1] for bd in bounds], axis=0)
        support = np.arange(J)
        ws = w0
        for _ in range(J + 1):
            mag = np.sum([np.abs(w) for w in ws], axis=0)
            keep = np.union1d(np.flatnonzero((mag >= L) & (mag <= U)), forced).astype(int)
            keep = np.intersect1d(keep, support)
            if np.array_equal(keep, support):
                break
            support = keep
            ws = solve_all(support)
        loss = sum(_loss(G, w, w0p, n, J) for (G, _), w, w0p, n in zip(systems, ws, w0, Gw0))
        return ws, support, loss

    results = []
    failures = {}
    for lam in lambdas:
        try:
            results.append(run(lam))
        except QPError as exc:
            failures[float(lam)] = str(exc)
            results.append(([np.full(J, np.nan)] * P, np.zeros(0, int), np.inf))
    losses = np.array([r[2] for r in results])
    coefs = np.array([np.concatenate(r[0]) for r in results])
    path = SparsityPath(lambdas, coefs, losses, [r[1] for r in results], np.concatenate(w0), failures)
    k = _smallest_minimizer(losses)
    return float(lambdas[k]), [w.copy() for w in results[k][0]], path


class MSTLSRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`select_lambda`.

    Parameters
    ----------
    lambdas : array-like, optional
        Threshold grid; defaults to :data:`DEFAULT_LAMBDAS`.
    forced : sequence of int
        Columns that are never thresholded.
    tol : float
        QP optimality and feasibility tolerance.
    max_iter : int
        QP iteration cap.

    Attributes
    ----------
    coef_ : ndarray
        Selected coefficients.
    lambda_ : float
        Selected threshold.
    path_ : SparsityPath
        Full sweep.
    kkt_ : dict
        KKT audit of the selected solution on its support.
    """

    def __init__(self, lambdas=None, forced=(), tol=1e-10, max_iter=1000):
        self.lambdas = lambdas
        self.forced = forced
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, G, b, constraints: LinearConstraints | None = None):
        G = check_array(G, ensure_min_features=1)
        b = check_array(np.asarray(b).reshape(-1, 1), ensure_2d=True).ravel()
        if b.size != G.shape[0]:
            raise ValueError("G and b have inconsistent row counts")
        lam, w, path = select_lambda(G, b, self.lambdas, constraints, self.forced, self.tol, self.max_iter)
        self.coef_ = w
        self.lambda_ = lam
        self.path_ = path
        self.support_ = np.flatnonzero(w)
        cons = LinearConstraints(G.shape[1]) if constraints is None else constraints
        sub = cons.restrict(self.support_)
        self.kkt_ = kkt_audit(QPProblem(G[:, self.support_], b, sub.A, sub.C, sub.d), w[self.support_])
        self.n_features_in_ = G.shape[1]
        return self

    def predict(self, G):
        check_is_fitted(self, "coef_")
        G = check_array(G)
        return G @ self.coef_
