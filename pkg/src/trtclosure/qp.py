"""Primal active-set solver for min ½‖Gw − b‖² subject to Aw = 0, Cw ≤ d.

The iteration starts from the feasible point w = 0 (which requires d ≥ 0) and
solves each equality-constrained subproblem in a null-space basis with
orthogonal factorizations, so the Gram matrix GᵀG is never formed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

__all__ = ["QPProblem", "QPResult", "QPError", "qp_solve", "kkt_audit"]


class QPError(RuntimeError):
    """Quadratic program could not be solved."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class QPProblem:
    """Constrained least-squares problem data.

    ``A`` (equalities Aw = 0) and ``C``/``d`` (inequalities Cw ≤ d) may be
    ``None``.
    """

    G: np.ndarray
    b: np.ndarray
    A: np.ndarray | None = None
    C: np.ndarray | None = None
    d: np.ndarray | None = None
    tol: float = 1e-10
    max_iter: int = 1000

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        J = self.G.shape[1]
        if self.b.size != self.G.shape[0]:
            raise ValueError("G and b have inconsistent row counts")
        self.A = np.zeros((0, J)) if self.A is None else np.atleast_2d(np.asarray(self.A, float)).reshape(-1, J)
        if self.C is None:
            self.C = np.zeros((0, J))
            self.d = np.zeros(0)
        else:
            self.C = np.atleast_2d(np.asarray(self.C, float)).reshape(-1, J)
            self.d = np.zeros(self.C.shape[0]) if self.d is None else np.asarray(self.d, float).ravel()
        if self.d.size != self.C.shape[0]:
            raise ValueError("C and d have inconsistent row counts")


@dataclass
class QPResult:
    w: np.ndarray
    active: list
    iterations: int
    kkt: dict = field(default_factory=dict)


def _normalize_rows(M, rhs=None):
    n = np.linalg.norm(M, axis=1)
    keep = n > 0
    Mn = M[keep] / n[keep, None]
    if rhs is None:
        return Mn, None, keep
    return Mn, rhs[keep] / n[keep], keep


def _null_space(M, J):
    if M.shape[0] == 0:
        return np.eye(J)
    return linalg.null_space(M, rcond=1e-12)


def qp_solve(problem: QPProblem) -> QPResult:
    """Solve ``problem`` by a primal active-set method.

    Columns of G are scaled to unit norm and constraint rows to unit norm
    before iterating; the returned coefficients are in the original scaling.
    Ties in the adding and dropping rules go to the lowest constraint index.
    """
    G, b = problem.G, problem.b
    K, J = G.shape
    tol = problem.tol
    norms = np.linalg.norm(G, axis=0)
    live = norms > 0
    w_full = np.zeros(J)
    if not np.any(live) or J == 0:
        return QPResult(w_full, [], 0, kkt_audit(problem, w_full))
    Gs = G[:, live] / norms[live]
    As = problem.A[:, live] / norms[live]
    Cs = problem.C[:, live] / norms[live]
    As, _, _ = _normalize_rows(As)
    Cs, ds, kept_rows = _normalize_rows(Cs, problem.d)
    if np.any(ds < -tol):
        raise QPError("w = 0 violates the inequality constraints; d must be non-negative")
    ds = np.maximum(ds, 0.0)
    n = Gs.shape[1]
    bnorm = max(np.linalg.norm(b), np.finfo(float).tiny)
    x = np.zeros(n)
    active: list[int] = []
    # working sets seen since the iterate last moved; a repeat means the
    # method is cycling at a degenerate vertex and x is already optimal
    seen: set = set()
    it = 0
    for it in range(1, problem.max_iter + 1):
        key = tuple(active)
        if key in seen:
            break
        seen.add(key)
        Aw = np.vstack([As, Cs[active]]) if active else As
        Z = _null_space(Aw, n)
        r = b - Gs @ x
        if Z.shape[1]:
            z = np.linalg.lstsq(Gs @ Z, r, rcond=None)[0]
            p = Z @ z
        else:
            p = np.zeros(n)
        # stationary on the working set: negligible step or negligible model
        # decrease (an ill-conditioned G leaves round-off-sized steps)
        Gp = Gs @ p
        gain = np.linalg.norm(r) - np.linalg.norm(r - Gp)
        if (
            np.linalg.norm(p) <= tol * (1.0 + np.linalg.norm(x))
            or np.linalg.norm(Gp) <= tol * bnorm
            or gain <= tol * bnorm
        ):
            g = Gs.T @ (Gs @ x - b)
            if not active:
                break
            lam = np.linalg.lstsq(Aw.T, -g, rcond=None)[0][As.shape[0]:]
            worst = float(np.min(lam))
            if worst >= -tol * bnorm:
                break
            drop = int(np.flatnonzero(lam == worst)[0])
            active.pop(drop)
            continue
        Cp = Cs @ p
        slack = ds - Cs @ x
        alpha = 1.0
        block = -1
        if Cs.shape[0]:
            cand = np.flatnonzero((Cp > tol * np.linalg.norm(p)) & ~np.isin(np.arange(Cs.shape[0]), active))
            if cand.size:
                ratios = np.maximum(slack[cand], 0.0) / Cp[cand]
                rmin = float(np.min(ratios))
                if rmin < 1.0:
                    alpha = rmin
                    block = int(cand[np.flatnonzero(ratios == rmin)[0]])
        if alpha * np.linalg.norm(Gs @ p) > tol * bnorm:
            seen.clear()
        x = x + alpha * p
        if block >= 0:
            active.append(block)
            active.sort()
    else:
        w_full[live] = x / norms[live]
        raise QPError(
            f"active-set iteration limit {problem.max_iter} reached",
            kkt_audit(problem, w_full),
        )
    w_full[live] = x / norms[live]
    row_ids = np.flatnonzero(kept_rows)
    return QPResult(w_full, [int(row_ids[i]) for i in active], it, kkt_audit(problem, w_full))


def kkt_audit(problem: QPProblem, w: np.ndarray, active_tol: float = 1e-9) -> dict:
    """Relative KKT residuals of ``w`` computed independently of the solver.

    Multipliers are recovered by bound-constrained least squares
    (free for equalities, non-negative for nearly active inequalities).
    """
    G, b, A, C, d = problem.G, problem.b, problem.A, problem.C, problem.d
    norms = np.linalg.norm(G, axis=0)
    live = norms > 0
    Gs = G[:, live] / norms[live] if np.any(live) else np.zeros((G.shape[0], 0))
    xs = w[live] * norms[live]
    grad = Gs.T @ (Gs @ xs - b)
    scale = max(np.linalg.norm(Gs.T @ b), np.finfo(float).tiny)
    An, _, _ = _normalize_rows(A[:, live] / norms[live]) if A.shape[0] else (np.zeros((0, xs.size)), None, None)
    if C.shape[0]:
        Cn, dn, _ = _normalize_rows(C[:, live] / norms[live], d)
    else:
        Cn, dn = np.zeros((0, xs.size)), np.zeros(0)
    slack = dn - Cn @ xs
    near = np.flatnonzero(np.abs(slack) <= active_tol * (1.0 + np.linalg.norm(xs)))
    M = np.vstack([An, Cn[near]]).T if (An.shape[0] + near.size) else np.zeros((xs.size, 0))
    if M.shape[1]:
        lb = np.r_[np.full(An.shape[0], -np.inf), np.zeros(near.size)]
        ub = np.full(M.shape[1], np.inf)
        res = optimize.lsq_linear(M, -grad, bounds=(lb, ub), tol=1e-14, method="bvls")
        mult = res.x
        stat = np.linalg.norm(grad + M @ mult) / scale
        lam = mult[An.shape[0]:]
    else:
        stat = np.linalg.norm(grad) / scale
        lam = np.zeros(0)
    eq = float(np.max(np.abs(An @ xs))) if An.shape[0] else 0.0
    ineq = float(max(0.0, -np.min(slack))) if slack.size else 0.0
    comp = float(np.max(np.abs(lam * slack[near])) / scale) if lam.size else 0.0
    return {
        "stationarity": float(stat),
        "equality_violation": eq,
        "inequality_violation": ineq,
        "complementarity": comp,
        "min_multiplier": float(np.min(lam)) if lam.size else 0.0,
        "n_active": int(near.size),
    }
