"""Closure models for the (e, F, T, S) balance law and their parametrization.

A :class:`ClosureModel` evaluates

    ∂_t e = w⁰₁ ∂_x F
    ∂_t F = −∂_x p^F + q^F,     p^F = −Σ W_j f_j,   q^F = Σ V_k g_k
    ∂_t T = w⁰₂ T + w⁰₃ S
    ∂_t S = −∂_x p^σ + q^σ

with library coefficients stored as the right-hand-side weights of ∂_x f_j and
g_k.  A :class:`ParametrizedClosure` holds log-linear fits
|w| = w₀ γ^{η^γ} (T_in³)^{η^T} per retained term.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import interpolate

from . import physics
from .physics import DEFAULT_UNITS, UnitSystem
from .termlib import (
    VARIABLES,
    TermLibrary,
    base_defaults,
    build_F_library,
    build_sigma_library,
    monomial,
)

__all__ = [
    "ClosureModel",
    "ClosureValidityWarning",
    "LogLinearFitError",
    "ParametrizedClosure",
    "TermFit",
    "central_difference",
    "mirror_state",
    "mirror_rhs",
    "fit_loglinear",
    "instantiate_at",
    "tabulated_closure",
    "KAPPA_L_MIN",
    "THIN_CLOSURE_LOGLINEAR",
]

#: Smallest κ_L for which the learned optically thin closures are trusted.
KAPPA_L_MIN = 0.07


class ClosureValidityWarning(UserWarning):
    """Closure instantiated outside its trusted κ_L range."""


class LogLinearFitError(ValueError):
    """Inconsistent ensemble for a log-linear coefficient fit."""


def central_difference(dx: float) -> Callable[[np.ndarray], np.ndarray]:
    """Second-order ∂_x along the last axis (one-sided at the ends)."""

    def ddx(P):
        return np.gradient(P, dx, axis=-1, edge_order=2)

    return ddx


def mirror_state(u: np.ndarray) -> np.ndarray:
    """Reflection x → −x: reverse cells and negate F."""
    m = np.asarray(u, float)[:, ::-1].copy()
    m[1] = -m[1]
    return m


def mirror_rhs(r: np.ndarray) -> np.ndarray:
    """Image of a right-hand side under reflection (e, T, S even; F odd)."""
    return mirror_state(r)


class _Terms:
    # active monomials of one block, evaluated without the F-first bookkeeping
    def __init__(self, library: TermLibrary, w: np.ndarray, kind: str):
        idx = [j for j, t in enumerate(library) if t.kind == kind and w[j] != 0]
        self.powers = [library[j].powers for j in idx]
        self.w = np.array([w[j] for j in idx], dtype=float)

    def value(self, fields):
        out = 0.0
        for wj, p in zip(self.w, self.powers):
            out = out + wj * monomial(p, fields)
        return out

    def deriv(self, var, fields):
        i = VARIABLES.index(var)
        out = 0.0
        for wj, p in zip(self.w, self.powers):
            if p[i] == 0:
                continue
            q = list(p)
            q[i] -= 1
            out = out + wj * p[i] * monomial(q, fields)
        return out


@dataclass
class ClosureModel:
    """Coefficients of the closed (e, F, T, S) system over two term libraries.

    Attributes
    ----------
    lib_F, lib_S : TermLibrary
        Candidate libraries of the F and S equations.
    w_F, w_S : ndarray
        Right-hand-side coefficients over the libraries.
    w0 : ndarray of shape (3,)
        (w⁰₁, w⁰₂, w⁰₃) of the e and T equations.
    params : dict
        Parameter tag (gamma, T_in, rho_cv, ...) and unit system.
    provenance : dict
        Free-form history.
    """

    lib_F: TermLibrary
    lib_S: TermLibrary
    w_F: np.ndarray
    w_S: np.ndarray
    w0: np.ndarray
    params: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w_F = np.asarray(self.w_F, dtype=float).copy()
        self.w_S = np.asarray(self.w_S, dtype=float).copy()
        self.w0 = np.asarray(self.w0, dtype=float).copy()
        if self.w_F.shape != (len(self.lib_F),) or self.w_S.shape != (len(self.lib_S),):
            raise ValueError("coefficient blocks do not match library sizes")
        if self.w0.shape != (3,):
            raise ValueError("w0 must have three entries")
        if not (np.all(np.isfinite(self.w_F)) and np.all(np.isfinite(self.w_S)) and np.all(np.isfinite(self.w0))):
            raise ValueError("coefficients must be finite")
        self._build()

    def _build(self):
        self._pF = _Terms(self.lib_F, self.w_F, "flux")
        self._qF = _Terms(self.lib_F, self.w_F, "source")
        self._pS = _Terms(self.lib_S, self.w_S, "flux")
        self._qS = _Terms(self.lib_S, self.w_S, "source")

    @property
    def units(self) -> UnitSystem:
        u = self.params.get("units")
        return UnitSystem.from_dict(u) if isinstance(u, Mapping) else DEFAULT_UNITS

    @staticmethod
    def _fields(u):
        u = np.asarray(u, dtype=float)
        return {v: u[i] for i, v in enumerate(VARIABLES)}

    def flux(self, u: np.ndarray) -> np.ndarray:
        """Physical fluxes (P^e, P^F, 0, P^σ) for states ``u`` of shape (4, N)."""
        f = self._fields(u)
        P = np.zeros(np.shape(u), dtype=float)
        P[0] = -self.w0[0] * f["F"]
        P[1] = -self._pF.value(f)
        P[3] = -self._pS.value(f)
        return P

    def source(self, u: np.ndarray) -> np.ndarray:
        f = self._fields(u)
        Q = np.zeros(np.shape(u), dtype=float)
        Q[1] = self._qF.value(f)
        Q[2] = self.w0[1] * f["T"] + self.w0[2] * f["S"]
        Q[3] = self._qS.value(f)
        return Q

    def rhs(self, u: np.ndarray, ddx: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """−∂_x P(u) + Q(u) with the aggregated fluxes differentiated by ``ddx``."""
        out = -ddx(self.flux(u)) + self.source(u)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite right-hand side")
        return out

    def jacobian_entries(self, u: np.ndarray):
        """(∂_e p^F, ∂_F p^F, ∂_S p^σ) at ``u``."""
        f = self._fields(u)
        shape = np.shape(f["T"])
        a = -np.broadcast_to(self._pF.deriv("e", f), shape)
        b = -np.broadcast_to(self._pF.deriv("F", f), shape)
        d = -np.broadcast_to(self._pS.deriv("S", f), shape)
        return a, b, d

    def wave_speed(self, u: np.ndarray) -> np.ndarray:
        """Bound on |λ| over the flux-Jacobian eigenvalues {0, d, ½(b ± √(b² − 4w⁰₁a))}."""
        a, b, d = self.jacobian_entries(u)
        disc = np.sqrt(b * b + 4.0 * np.abs(self.w0[0] * a))
        return np.maximum(np.abs(d), 0.5 * (np.abs(b) + disc))

    def equilibrium_residual(self, T) -> np.ndarray:
        """Sources at black-body states; zero when the equalities hold."""
        from .constraints import equilibrium_states

        g = float(self.params["gamma"])
        st = equilibrium_states(T, g, float(self.params["rho_cv"]), self.units)
        u = np.stack([st[v] for v in VARIABLES])
        return self.source(u)

    # ---- serialization
    def to_dict(self) -> dict:
        return {
            "kind": "ClosureModel",
            "version": 1,
            "lib_F": self.lib_F.to_dict(),
            "lib_S": self.lib_S.to_dict(),
            "w_F": self.w_F.tolist(),
            "w_S": self.w_S.tolist(),
            "w0": self.w0.tolist(),
            "params": _plain(self.params),
            "provenance": _plain(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClosureModel":
        if d.get("kind") != "ClosureModel":
            raise ValueError("not a ClosureModel document")
        return cls(
            lib_F=TermLibrary.from_dict(d["lib_F"]),
            lib_S=TermLibrary.from_dict(d["lib_S"]),
            w_F=np.array(d["w_F"], float),
            w_S=np.array(d["w_S"], float),
            w0=np.array(d["w0"], float),
            params=dict(d.get("params", {})),
            provenance=dict(d.get("provenance", {})),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "ClosureModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def describe(self) -> list[str]:
        """Human-readable nonzero terms per equation."""
        lines = [f"e: {self.w0[0]:+.6e} d_x(F)", f"T: {self.w0[1]:+.6e} T {self.w0[2]:+.6e} S"]
        for slot, lib, w in (("F", self.lib_F, self.w_F), ("S", self.lib_S, self.w_S)):
            terms = [f"{w[j]:+.6e} {lib[j].name}" for j in np.flatnonzero(w)]
            lines.append(f"{slot}: " + " ".join(terms))
        return lines


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# ---------------------------------------------------------------------------
# log-linear parametrization


@dataclass
class TermFit:
    """|w| ≈ |w₀| γ^{η^γ} (T_in³)^{η^T} with sign carried by ``w0``."""

    slot: str
    kind: str
    powers: tuple
    w0: float
    eta_T: float
    eta_gamma: float
    r2: float = 0.0

    @property
    def sign(self) -> float:
        return float(np.sign(self.w0))

    def __call__(self, gamma, T_in3):
        return self.w0 * np.power(gamma, self.eta_gamma) * np.power(T_in3, self.eta_T)

    def to_dict(self) -> dict:
        return {
            "slot": self.slot,
            "kind": self.kind,
            "powers": list(self.powers),
            "w0": self.w0,
            "eta_T": self.eta_T,
            "eta_gamma": self.eta_gamma,
            "r2": self.r2,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["slot"], d["kind"], tuple(d["powers"]), float(d["w0"]), float(d["eta_T"]), float(d["eta_gamma"]), float(d.get("r2", 0.0)))


_BASE_NAMES = ("w0_1", "w0_2", "w0_3")


@dataclass
class ParametrizedClosure:
    """Log-linear coefficient relations over (γ, T_in³).

    Attributes
    ----------
    lib_F, lib_S : TermLibrary
    terms : list of TermFit
        One entry per retained library term (the shared support).
    base : dict
        Optional fits for the base coefficients keyed ``w0_1``, ``w0_2``,
        ``w0_3``; missing entries use the analytic values.
    reference : dict
        rho_cv, T_o, L and unit system used at instantiation.
    samples : dict
        Training points and coefficients (for spline interpolation).
    """

    lib_F: TermLibrary
    lib_S: TermLibrary
    terms: list
    base: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": "ParametrizedClosure",
            "version": 1,
            "lib_F": self.lib_F.to_dict(),
            "lib_S": self.lib_S.to_dict(),
            "terms": [t.to_dict() for t in self.terms],
            "base": {k: v.to_dict() for k, v in self.base.items()},
            "reference": _plain(self.reference),
            "samples": _plain(self.samples),
        }

    @classmethod
    def from_dict(cls, d) -> "ParametrizedClosure":
        if d.get("kind") != "ParametrizedClosure":
            raise ValueError("not a ParametrizedClosure document")
        return cls(
            TermLibrary.from_dict(d["lib_F"]),
            TermLibrary.from_dict(d["lib_S"]),
            [TermFit.from_dict(t) for t in d["terms"]],
            {k: TermFit.from_dict(v) for k, v in d.get("base", {}).items()},
            dict(d.get("reference", {})),
            dict(d.get("samples", {})),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "ParametrizedClosure":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def find(self, slot, kind, powers) -> TermFit:
        for t in self.terms:
            if t.slot == slot and t.kind == kind and tuple(t.powers) == tuple(powers):
                return t
        raise KeyError((slot, kind, tuple(powers)))


def _loglinear(gammas, T3s, values, label):
    values = np.asarray(values, float)
    if np.any(values == 0) or not np.all(np.isfinite(values)):
        raise LogLinearFitError(f"{label}: zero or non-finite coefficient in the ensemble")
    signs = np.sign(values)
    if not (np.all(signs > 0) or np.all(signs < 0)):
        raise LogLinearFitError(f"{label}: mixed signs across the ensemble")
    X = np.column_stack([np.ones(len(values)), np.log10(gammas), np.log10(T3s)])
    coef, *_ = np.linalg.lstsq(X, np.log10(np.abs(values)), rcond=None)
    sign = signs[0]
    fitted = sign * 10.0 ** (X @ coef)
    r2 = float(np.linalg.norm(fitted - values) / np.linalg.norm(values))
    return sign * 10.0 ** coef[0], coef[2], coef[1], r2


def fit_loglinear(
    ensemble: Sequence[ClosureModel],
    fit_base: bool = True,
    reference: Mapping | None = None,
) -> ParametrizedClosure:
    """Fit log₁₀|w| = c₀ + η^γ log₁₀γ + η^T log₁₀T_in³ for every retained term.

    ``r2`` is the relative ℓ₂ misfit ‖w_fit − w‖/‖w‖ over the ensemble.
    Raises :class:`LogLinearFitError` for mixed signs, terms that are not
    retained by every member, or a rank-deficient parameter design.
    """
    if len(ensemble) < 3:
        raise LogLinearFitError("at least three ensemble members are required")
    lib_F, lib_S = ensemble[0].lib_F, ensemble[0].lib_S
    for m in ensemble:
        if m.lib_F.to_dict() != lib_F.to_dict() or m.lib_S.to_dict() != lib_S.to_dict():
            raise LogLinearFitError("ensemble members use different libraries")
    gammas = np.array([float(m.params["gamma"]) for m in ensemble])
    T3s = np.array([float(m.params.get("T_in3", float(m.params.get("T_in", 0.0)) ** 3)) for m in ensemble])
    X = np.column_stack([np.ones(len(ensemble)), np.log10(gammas), np.log10(T3s)])
    if np.linalg.matrix_rank(X) < 3:
        raise LogLinearFitError("parameter design is rank deficient (collinear gamma and T_in^3)")
    terms = []
    problems = []
    for slot, lib, key in (("F", lib_F, "w_F"), ("S", lib_S, "w_S")):
        W = np.array([getattr(m, key) for m in ensemble])
        nz = W != 0
        for j in range(len(lib)):
            if not np.any(nz[:, j]):
                continue
            if not np.all(nz[:, j]):
                problems.append(f"{slot}:{lib[j].name} (not retained by every member)")
                continue
            try:
                w0, eT, eg, r2 = _loglinear(gammas, T3s, W[:, j], f"{slot}:{lib[j].name}")
            except LogLinearFitError as exc:
                problems.append(str(exc))
                continue
            terms.append(TermFit(slot, lib[j].kind, lib[j].powers, w0, eT, eg, r2))
    if problems:
        raise LogLinearFitError("; ".join(problems))
    base = {}
    if fit_base:
        B = np.array([m.w0 for m in ensemble])
        for i, name in enumerate(_BASE_NAMES):
            w0, eT, eg, r2 = _loglinear(gammas, T3s, B[:, i], name)
            base[name] = TermFit("base", "base", (i,), w0, eT, eg, r2)
    ref = dict(reference or {})
    p0 = ensemble[0].params
    for k in ("rho_cv", "T_o", "L", "units"):
        if k in p0 and k not in ref:
            ref[k] = p0[k]
    samples = {
        "gamma": gammas.tolist(),
        "T_in3": T3s.tolist(),
        "w_F": [m.w_F.tolist() for m in ensemble],
        "w_S": [m.w_S.tolist() for m in ensemble],
        "w0": [m.w0.tolist() for m in ensemble],
    }
    return ParametrizedClosure(lib_F, lib_S, terms, base, ref, samples)


def instantiate_at(
    pc: ParametrizedClosure,
    gamma: float,
    T_in3: float,
    method: str = "loglinear",
    warn: bool = True,
) -> ClosureModel:
    """ClosureModel at (γ, T_in³) from the log-linear relations.

    ``method="spline"`` instead interpolates log₁₀|w| with a bivariate spline
    through the stored training samples (inside their hull only).  A
    :class:`ClosureValidityWarning` is emitted when κ_L < 0.07.
    """
    if not (gamma > 0 and T_in3 > 0):
        raise ValueError("gamma and T_in^3 must be positive")
    ref = pc.reference
    units = UnitSystem.from_dict(ref["units"]) if isinstance(ref.get("units"), Mapping) else DEFAULT_UNITS
    rho_cv = float(ref.get("rho_cv", 8.0e10))
    T_in = float(T_in3) ** (1.0 / 3.0)
    T_o = float(ref.get("T_o", 1.0))
    L = float(ref.get("L", 4.0))
    kl = physics.kappa_L(T_o, T_in, gamma, L, units) if T_o < T_in else float("inf")
    if warn and kl < KAPPA_L_MIN:
        warnings.warn(
            f"kappa_L = {kl:.3g} at (gamma, T_in^3) = ({gamma:g}, {T_in3:g}) is below {KAPPA_L_MIN}",
            ClosureValidityWarning,
        )
    w_F = np.zeros(len(pc.lib_F))
    w_S = np.zeros(len(pc.lib_S))
    if method == "loglinear":
        for t in pc.terms:
            lib, w = (pc.lib_F, w_F) if t.slot == "F" else (pc.lib_S, w_S)
            w[lib.index(t.kind, t.powers)] = t(gamma, T_in3)
        w0 = base_defaults(gamma, rho_cv, units)
        for i, name in enumerate(_BASE_NAMES):
            if name in pc.base:
                w0[i] = pc.base[name](gamma, T_in3)
    elif method == "spline":
        w_F, w_S, w0 = _spline_coefficients(pc, gamma, T_in3)
    else:
        raise ValueError(f"unknown method {method!r}")
    params = {"gamma": float(gamma), "T_in3": float(T_in3), "T_in": T_in, "rho_cv": rho_cv, "T_o": T_o, "L": L, "units": units.to_dict(), "kappa_L": kl}
    return ClosureModel(pc.lib_F, pc.lib_S, w_F, w_S, w0, params, {"generator": f"instantiate_at:{method}"})


def _spline_coefficients(pc, gamma, T_in3):
    s = pc.samples
    if not s:
        raise ValueError("no training samples stored for spline interpolation")
    lg = np.log10(np.asarray(s["gamma"], float))
    lt = np.log10(np.asarray(s["T_in3"], float))
    ug, ut = np.unique(lg), np.unique(lt)
    if ug.size * ut.size != lg.size:
        raise ValueError("spline interpolation needs samples on a rectangular grid")
    qg, qt = np.log10(gamma), np.log10(T_in3)
    if not (ug[0] - 1e-12 <= qg <= ug[-1] + 1e-12 and ut[0] - 1e-12 <= qt <= ut[-1] + 1e-12):
        raise ValueError("spline interpolation is only available inside the training hull")
    kx, ky = min(2, ug.size - 1), min(2, ut.size - 1)

    def interp(values):
        values = np.asarray(values, float)
        if np.all(values == 0):
            return 0.0
        sign = np.sign(values[values != 0][0])
        grid = np.empty((ug.size, ut.size))
        for v, a, b in zip(values, lg, lt):
            grid[np.searchsorted(ug, a), np.searchsorted(ut, b)] = np.log10(np.abs(v)) if v != 0 else np.nan
        if np.any(~np.isfinite(grid)):
            return 0.0
        spl = interpolate.RectBivariateSpline(ug, ut, grid, kx=kx, ky=ky)
        return sign * 10.0 ** float(spl(qg, qt)[0, 0])

    WF = np.asarray(s["w_F"], float)
    WS = np.asarray(s["w_S"], float)
    W0 = np.asarray(s["w0"], float)
    w_F = np.array([interp(WF[:, j]) for j in range(WF.shape[1])])
    w_S = np.array([interp(WS[:, j]) for j in range(WS.shape[1])])
    w0 = np.array([interp(W0[:, j]) for j in range(3)])
    return w_F, w_S, w0


# ---------------------------------------------------------------------------
# published optically thin closure

#: Log-linear parameters (slot, kind, powers (e, F, T, S), w₀, η^T, η^γ, r²)
#: of a twelve-term optically thin closure over (γ, T_in³).
THIN_CLOSURE_LOGLINEAR = (
    ("F", "flux", (1, 0, 0, 0), -8.17e20, 1.56e-2, -1.87e-2, 2.31e-4),
    ("F", "flux", (1, 2, 0, 0), 6.80e-4, -2.65, -2.02e-2, 2.86e-4),
    ("F", "flux", (0, 4, 0, 0), -9.65e-27, -3.91, -1.01e-1, 8.11e-4),
    ("S", "flux", (0, 1, 0, 0), -3.49e-2, -7.06e-1, 7.19e-1, 8.51e-3),
    ("S", "flux", (0, 1, 0, 1), -4.01e-2, -1.39, 2.62e-2, 8.66e-4),
    ("S", "flux", (0, 1, 0, 3), 8.95e-5, -2.38, -1.69, 3.30e-4),
    ("S", "flux", (0, 3, 0, 0), 7.24e-26, -3.51, 8.03e-1, 3.33e-4),
    ("S", "flux", (0, 3, 0, 1), 1.70e-26, -4.08, 5.72e-2, 2.11e-4),
    ("S", "source", (0, 0, 0, 2), -8.60e9, -7.67e-1, -6.10e-1, 2.76e-2),
    ("S", "source", (0, 0, 1, 1), 1.82e11, -7.67e-1, 3.90e-1, 9.69e-3),
    ("S", "source", (1, 0, 0, 1), 3.07e7, -1.38, 1.07e-1, 2.45e-2),
    ("S", "source", (1, 0, 1, 0), -6.50e8, -1.38, 1.11, 2.29e-2),
)


def tabulated_closure(rho_cv: float | None = None, T_o: float = 1.0, L: float = 4.0, units: UnitSystem = DEFAULT_UNITS) -> ParametrizedClosure:
    """:data:`THIN_CLOSURE_LOGLINEAR` as a ParametrizedClosure over the
    (4, 3) libraries; base coefficients use their analytic values."""
    from .kinetic import DEFAULT_RHO_CV

    terms = [TermFit(s, k, p, w0, eT, eg, r2) for s, k, p, w0, eT, eg, r2 in THIN_CLOSURE_LOGLINEAR]
    ref = {"rho_cv": DEFAULT_RHO_CV if rho_cv is None else rho_cv, "T_o": T_o, "L": L, "units": units.to_dict()}
    return ParametrizedClosure(build_F_library(4, 3), build_sigma_library(4, 3), terms, {}, ref)
