"""Linear constraints on closure coefficients.

Equalities make every black-body state u* = (ρc_V T + aT⁴, 0, T, αT/c) a
steady state.  Inequalities impose weak hyperbolicity of the (e, F) block
(∂_e p^F ≥ 0 with p^F = −Σ W_j f_j) and linear stability of the sources:

    ∂_F q^F ≤ 0,   ∂_T q^σ + (α/c) ∂_S q^σ ≤ 0,   ∂_S q^σ ≤ α/ρc_V.

Rows are written for the physical coefficient vector of one equation in the
form A w = 0 and C w ≤ d.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import physics
from .mstls import LinearConstraints
from .physics import DEFAULT_UNITS, UnitSystem
from .termlib import VARIABLES, Term, TermEvaluationError, TermLibrary, monomial

__all__ = [
    "ConstraintSet",
    "SingularNodeWarning",
    "equilibrium_states",
    "default_T_grid",
    "build_equality",
    "build_hyperbolicity",
    "build_source_stability",
    "build_constraints",
    "audit",
    "build_T_equality",
    "build_hyperbolicity_at",
    "violation_excess",
]

log = logging.getLogger(__name__)


class SingularNodeWarning(UserWarning):
    """A constraint row was skipped because a term is singular at the node."""


@dataclass
class ConstraintSet:
    """Constraints for the coefficient vector of one equation.

    Attributes
    ----------
    slot : str
        Equation whose coefficients are constrained.
    A : ndarray (M_E, J)
        Equality rows, A w = 0.
    C, D : ndarray (M_I, J), (M_I,)
        Inequality rows, C w ≤ D.
    meta : dict
        Row counts per constraint kind and the evaluation grids.
    """

    slot: str
    A: np.ndarray
    C: np.ndarray
    D: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_equality(self) -> int:
        return int(self.A.shape[0])

    @property
    def n_inequality(self) -> int:
        return int(self.C.shape[0])

    def linear(self, coef_scale: np.ndarray | None = None) -> LinearConstraints:
        """Constraints on w̃ with w = coef_scale ⊙ w̃."""
        s = np.ones(self.A.shape[1]) if coef_scale is None else np.asarray(coef_scale, float)
        return LinearConstraints(self.A.shape[1], self.A * s, self.C * s, self.D)

    def residuals(self, w) -> dict:
        w = np.asarray(w, float)
        eq = float(np.max(np.abs(self.A @ w))) if self.n_equality else 0.0
        ineq = float(np.max(self.C @ w - self.D)) if self.n_inequality else -np.inf
        return {"equality": eq, "inequality_excess": max(0.0, ineq)}

    def to_dict(self) -> dict:
        return {
            "slot": self.slot,
            "A": self.A.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "meta": self.meta,
        }


def default_T_grid(T_max: float, n: int = 7) -> np.ndarray:
    """linspace(0, 4·T_max, n)."""
    return np.linspace(0.0, 4.0 * T_max, n)


def equilibrium_states(T_grid, gamma: float, rho_cv: float, units: UnitSystem = DEFAULT_UNITS) -> dict:
    """Black-body states (e*, F*, T*, S*) on ``T_grid`` as arrays.

    S* = aσ_P(T)T⁴ = αT/c is linear in T, so S*(0) = 0.
    """
    T = np.asarray(T_grid, dtype=float)
    if np.any(T < 0):
        raise ValueError("temperatures must be non-negative")
    return {
        "e": rho_cv * T + units.a * T**4,
        "F": np.zeros_like(T),
        "T": T,
        "S": physics.alpha(gamma, units) * T / units.c,
    }


def _at(states: Mapping[str, np.ndarray], i: int) -> dict:
    return {v: np.asarray(states[v], float)[i : i + 1] for v in VARIABLES}


def _deriv_value(term: Term, var: str, state) -> float:
    c, q = term.derivative(var)
    if c == 0.0:
        return 0.0
    return float(c * monomial(q, state)[0])


def build_equality(library: TermLibrary, states: Mapping[str, np.ndarray]) -> tuple[np.ndarray, dict]:
    """Rows A_ij = g_j(u*_i) over source columns; flux columns are zero.

    All-zero rows are dropped.  Singular (row, column) entries are set to
    zero with a warning.
    """
    J = len(library)
    n = np.asarray(states["T"]).size
    rows = []
    skipped = 0
    for i in range(n):
        st = _at(states, i)
        row = np.zeros(J)
        for j, term in enumerate(library):
            if term.kind != "source":
                continue
            try:
                row[j] = float(monomial(term.powers, st)[0])
            except TermEvaluationError:
                skipped += 1
                warnings.warn(f"equality entry ({i}, {term.name}) singular; excluded", SingularNodeWarning)
        if np.any(row != 0):
            rows.append(row)
    A = np.array(rows).reshape(-1, J)
    return A, {"equality_rows": int(A.shape[0]), "equality_nodes": int(n), "equality_singular": skipped}


def build_hyperbolicity(library: TermLibrary, e_max: float, F_max: float, T_max: float) -> tuple[np.ndarray, np.ndarray, dict]:
    """Rows Σ_j W_j ∂_e f_j ≤ 0 (equivalently ∂_e p^F ≥ 0) on a state grid.

    The grid is linspace(0, e_max, p_max) × linspace(0, F_max, p_max + 1) ×
    linspace(0, T_max, p_max + 1) with p_max from the library caps.
    """
    p_max = int(library.caps.get("p_max", 3))
    eg = np.linspace(0.0, e_max, max(p_max, 1))
    Fg = np.linspace(0.0, F_max, p_max + 1)
    Tg = np.linspace(0.0, T_max, p_max + 1)
    J = len(library)
    rows = []
    for e in eg:
        for F in Fg:
            for T in Tg:
                st = {"e": np.array([e]), "F": np.array([F]), "T": np.array([T]), "S": np.array([0.0])}
                row = np.zeros(J)
                for j, term in enumerate(library):
                    if term.kind == "flux":
                        row[j] = _deriv_value(term, "e", st)
                rows.append(row)
    C = np.array(rows).reshape(-1, J)
    return C, np.zeros(C.shape[0]), {
        "hyperbolicity_rows": int(C.shape[0]),
        "state_grid": {"e": eg.tolist(), "F": Fg.tolist(), "T": Tg.tolist()},
    }


def build_source_stability(
    library: TermLibrary,
    states: Mapping[str, np.ndarray],
    gamma: float,
    rho_cv: float,
    units: UnitSystem = DEFAULT_UNITS,
) -> tuple[np.ndarray, np.ndarray, dict]:
    """Linear source-stability rows at each state in ``states``.

    F equation: ∂_F q^F ≤ 0.  S equation: ∂_T q^σ + (α/c)∂_S q^σ ≤ 0 and
    ∂_S q^σ ≤ α/ρc_V.  Nodes where a term is singular are skipped for that
    row with a :class:`SingularNodeWarning`.
    """
    al = physics.alpha(gamma, units)
    c = units.c
    J = len(library)
    n = np.asarray(states["T"]).size
    rows, rhs = [], []
    skipped = 0
    kinds = []
    if library.slot == "F":
        specs = [("dF", lambda t, st: _deriv_value(t, "F", st), 0.0)]
    elif library.slot == "S":
        specs = [
            ("dT+dS", lambda t, st: _deriv_value(t, "T", st) + al / c * _deriv_value(t, "S", st), 0.0),
            ("dS", lambda t, st: _deriv_value(t, "S", st), al / rho_cv),
        ]
    else:
        specs = []
    for i in range(n):
        st = _at(states, i)
        for name, fn, d in specs:
            row = np.zeros(J)
            try:
                for j, term in enumerate(library):
                    if term.kind == "source":
                        row[j] = fn(term, st)
            except TermEvaluationError:
                skipped += 1
                warnings.warn(
                    f"source-stability row {name} skipped at node {i} (T = {float(st['T'][0]):g})",
                    SingularNodeWarning,
                )
                continue
            if not np.all(np.isfinite(row)):
                skipped += 1
                warnings.warn(f"source-stability row {name} non-finite at node {i}", SingularNodeWarning)
                continue
            rows.append(row)
            rhs.append(d)
            kinds.append(name)
    C = np.array(rows).reshape(-1, J)
    return C, np.array(rhs, dtype=float), {
        "source_stability_rows": int(C.shape[0]),
        "source_stability_skipped": skipped,
        "source_stability_kinds": sorted(set(kinds)),
    }


def build_constraints(
    library: TermLibrary,
    gamma: float,
    rho_cv: float,
    T_max: float,
    e_max: float,
    F_max: float,
    boundary_states: Mapping[str, np.ndarray] | None = None,
    n_T: int = 7,
    units: UnitSystem = DEFAULT_UNITS,
) -> ConstraintSet:
    """All constraints for one learned equation (slot ``F`` or ``S``)."""
    T_grid = default_T_grid(T_max, n_T)
    eq_states = equilibrium_states(T_grid, gamma, rho_cv, units)
    A, meta = build_equality(library, eq_states)
    Cs, Ds = [], []
    if library.slot == "F":
        Ch, Dh, mh = build_hyperbolicity(library, e_max, F_max, T_max)
        Cs.append(Ch)
        Ds.append(Dh)
        meta.update(mh)
    stab_states = {v: np.asarray(eq_states[v], float) for v in VARIABLES}
    if boundary_states is not None:
        stab_states = {v: np.r_[stab_states[v], np.asarray(boundary_states[v], float)] for v in VARIABLES}
    Css, Dss, ms = build_source_stability(library, stab_states, gamma, rho_cv, units)
    Cs.append(Css)
    Ds.append(Dss)
    meta.update(ms)
    C = np.vstack(Cs) if Cs else np.zeros((0, len(library)))
    D = np.concatenate(Ds) if Ds else np.zeros(0)
    meta["T_grid"] = T_grid.tolist()
    meta["n_boundary_states"] = 0 if boundary_states is None else int(np.asarray(boundary_states["T"]).size)
    return ConstraintSet(library.slot, A, C, D, meta)


def _library_derivative(library: TermLibrary, w: np.ndarray, var: str, kind: str, fields) -> np.ndarray:
    out = 0.0
    for j, term in enumerate(library):
        if term.kind != kind or w[j] == 0:
            continue
        c, q = term.derivative(var)
        if c:
            out = out + w[j] * c * monomial(q, fields)
    return np.broadcast_to(out, np.shape(fields["T"])).astype(float)


def audit(
    library_F: TermLibrary,
    w_F: np.ndarray,
    library_S: TermLibrary,
    w_S: np.ndarray,
    fields: Mapping[str, np.ndarray],
    gamma: float,
    rho_cv: float,
    units: UnitSystem = DEFAULT_UNITS,
    rtol: float = 1e-8,
) -> dict:
    """Check hyperbolicity and source stability at every data point.

    Each condition is reported with the number of points violating it by
    more than ``rtol`` times the largest magnitude of the summed terms.
    """
    al = physics.alpha(gamma, units)
    c = units.c
    flds = {v: np.asarray(fields[v], float) for v in VARIABLES}
    w_F = np.asarray(w_F, float)
    w_S = np.asarray(w_S, float)
    report = {}

    def record(name, value, scale):
        tol = rtol * max(float(np.max(np.abs(scale))), np.finfo(float).tiny)
        viol = value > tol
        report[name] = {
            "violations": int(np.count_nonzero(viol)),
            "max_excess": float(np.max(value)) if value.size else 0.0,
            "tolerance": tol,
        }

    # ∂_e p^F ≥ 0  ⇔  Σ W ∂_e f ≤ 0
    hyp = _library_derivative(library_F, w_F, "e", "flux", flds)
    record("hyperbolicity", hyp, np.abs(hyp) + _abs_scale(library_F, w_F, "e", "flux", flds))
    dF = _library_derivative(library_F, w_F, "F", "source", flds)
    record("F_source", dF, _abs_scale(library_F, w_F, "F", "source", flds))
    dT = _library_derivative(library_S, w_S, "T", "source", flds)
    dS = _library_derivative(library_S, w_S, "S", "source", flds)
    sc = _abs_scale(library_S, w_S, "T", "source", flds) + al / c * _abs_scale(library_S, w_S, "S", "source", flds)
    record("S_source_mixed", dT + al / c * dS, sc)
    record("S_source_relaxation", dS - al / rho_cv, _abs_scale(library_S, w_S, "S", "source", flds) + al / rho_cv)
    report["total_violations"] = int(sum(v["violations"] for v in report.values() if isinstance(v, dict)))
    return report


def _abs_scale(library, w, var, kind, fields):
    out = 0.0
    for j, term in enumerate(library):
        if term.kind != kind or w[j] == 0:
            continue
        c, q = term.derivative(var)
        if c:
            out = out + np.abs(w[j] * c * monomial(q, fields))
    return np.broadcast_to(out, np.shape(fields["T"])).astype(float)


def build_T_equality(states: Mapping[str, np.ndarray]) -> np.ndarray:
    """Rows [T*_i, S*_i] of the T equation, enforcing w⁰₂T* + w⁰₃S* = 0."""
    T = np.asarray(states["T"], float)
    S = np.asarray(states["S"], float)
    A = np.column_stack([T, S])
    return A[np.any(A != 0, axis=1)]


def build_hyperbolicity_at(library: TermLibrary, states: Mapping[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray, dict]:
    """Hyperbolicity rows Σ_j W_j ∂_e f_j ≤ 0 at arbitrary states."""
    fl = {v: np.asarray(states[v], float).ravel() for v in VARIABLES}
    n = fl["T"].size
    C = np.zeros((n, len(library)))
    for j, term in enumerate(library):
        if term.kind != "flux":
            continue
        c, q = term.derivative("e")
        if c:
            C[:, j] = c * np.broadcast_to(monomial(q, fl), (n,))
    return C, np.zeros(n), {"hyperbolicity_rows": n}


def violation_excess(
    library: TermLibrary,
    w: np.ndarray,
    fields: Mapping[str, np.ndarray],
    gamma: float,
    rho_cv: float,
    units: UnitSystem = DEFAULT_UNITS,
    rtol: float = 1e-8,
) -> np.ndarray:
    """Largest tolerance-relative excess of the slot's conditions per point.

    Positive entries are audit violations (same tolerances as :func:`audit`).
    """
    al = physics.alpha(gamma, units)
    c = units.c
    fl = {v: np.asarray(fields[v], float).ravel() for v in VARIABLES}
    w = np.asarray(w, float)
    tiny = np.finfo(float).tiny

    def rel(value, scale):
        tol = rtol * max(float(np.max(np.abs(scale))), tiny)
        return (value - tol) / tol

    if library.slot == "F":
        hyp = _library_derivative(library, w, "e", "flux", fl)
        dF = _library_derivative(library, w, "F", "source", fl)
        return np.maximum(
            rel(hyp, np.abs(hyp) + _abs_scale(library, w, "e", "flux", fl)),
            rel(dF, _abs_scale(library, w, "F", "source", fl)),
        )
    dT = _library_derivative(library, w, "T", "source", fl)
    dS = _library_derivative(library, w, "S", "source", fl)
    sT = _abs_scale(library, w, "T", "source", fl)
    sS = _abs_scale(library, w, "S", "source", fl)
    return np.maximum(rel(dT + al / c * dS, sT + al / c * sS), rel(dS - al / rho_cv, sS + al / rho_cv))
