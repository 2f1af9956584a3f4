"""Candidate flux/source monomials for the closure equations.

A term is a monomial e^a F^b T^c S^d that enters an equation either under a
spatial derivative (``kind="flux"``) or as a pointwise source.  The libraries
are built so that every term transforms correctly under the reflection
(x, F) → (−x, −F): F-equation fluxes are even in F and its sources odd, while
S-equation fluxes are odd in F and its sources free of F.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import physics
from .physics import DEFAULT_UNITS, UnitSystem

__all__ = [
    "VARIABLES",
    "SLOTS",
    "Term",
    "TermLibrary",
    "TermEvaluationError",
    "build_F_library",
    "build_sigma_library",
    "base_terms",
    "base_defaults",
    "eval_term",
    "parity_ok",
    "FORCED_SIGMA_SOURCES",
]

VARIABLES = ("e", "F", "T", "S")
SLOTS = ("e", "F", "T", "S")
_KIND_ORDER = {"flux": 0, "source": 1}

#: Source monomials of the S equation that are never thresholded away:
#: eS, eT, TS and S² as (e, F, T, S) powers.
FORCED_SIGMA_SOURCES = frozenset({(1, 0, 0, 1), (1, 0, 1, 0), (0, 0, 1, 1), (0, 0, 0, 2)})


class TermEvaluationError(ValueError):
    """A monomial could not be evaluated (for example T ≤ 0 with T⁻ⁿ)."""


@dataclass(frozen=True)
class Term:
    """Monomial ``e^p0 F^p1 T^p2 S^p3`` attached to an equation slot."""

    slot: str
    kind: str
    powers: tuple[int, int, int, int]
    forced: bool = False
    key: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.slot not in SLOTS:
            raise ValueError(f"unknown slot {self.slot!r}")
        if self.kind not in _KIND_ORDER:
            raise ValueError(f"unknown kind {self.kind!r}")
        object.__setattr__(self, "powers", tuple(int(p) for p in self.powers))
        if len(self.powers) != 4:
            raise ValueError("powers must have four entries")

    @property
    def name(self) -> str:
        parts = []
        for v, p in zip(VARIABLES, self.powers):
            if p == 0:
                continue
            parts.append(v if p == 1 else f"{v}^{p}")
        mono = " ".join(parts) if parts else "1"
        return f"d_x({mono})" if self.kind == "flux" else mono

    @property
    def f_parity(self) -> int:
        """+1 if the monomial is even in F, −1 if odd."""
        return 1 if self.powers[1] % 2 == 0 else -1

    def derivative(self, var: str) -> tuple[float, tuple[int, int, int, int]]:
        """∂/∂var of the monomial as (coefficient, powers)."""
        i = VARIABLES.index(var)
        p = self.powers[i]
        if p == 0:
            return 0.0, self.powers
        q = list(self.powers)
        q[i] -= 1
        return float(p), tuple(q)

    def to_dict(self) -> dict:
        return {"slot": self.slot, "kind": self.kind, "powers": list(self.powers), "forced": self.forced}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Term":
        return cls(slot=d["slot"], kind=d["kind"], powers=tuple(d["powers"]), forced=bool(d.get("forced", False)))


def monomial(powers: Sequence[int], fields: Mapping[str, np.ndarray]) -> np.ndarray:
    """Evaluate e^p0 F^p1 T^p2 S^p3 with the F-first convention.

    Where the F power is positive and F = 0 the result is 0 regardless of the
    remaining factors.  Negative powers at non-positive bases elsewhere raise
    :class:`TermEvaluationError`.
    """
    pe, pF, pT, pS = (int(p) for p in powers)
    F = np.asarray(fields["F"], dtype=float)
    shape = np.broadcast_shapes(*(np.shape(fields[v]) for v in VARIABLES))
    out = np.ones(shape)
    if pF:
        out = out * F**pF
    zero_F = (F == 0) if pF > 0 else np.zeros(shape, dtype=bool)
    zero_F = np.broadcast_to(zero_F, shape)
    for v, p in (("e", pe), ("T", pT), ("S", pS)):
        if p == 0:
            continue
        base = np.broadcast_to(np.asarray(fields[v], dtype=float), shape)
        if p < 0:
            bad = (base <= 0) & ~zero_F
            if np.any(bad):
                raise TermEvaluationError(f"negative power of {v} at non-positive {v}")
            safe = np.where(zero_F, 1.0, base)
            out = out * safe**p
        else:
            out = out * base**p
    if pF > 0:
        out = np.where(zero_F, 0.0, out)
    return out


def eval_term(term: Term, fields: Mapping[str, np.ndarray]) -> tuple[np.ndarray, bool]:
    """Pointwise monomial and whether it still needs an x-derivative."""
    vals = monomial(term.powers, fields)
    if not np.all(np.isfinite(vals)):
        raise TermEvaluationError(f"non-finite values for term {term.name}")
    return vals, term.kind == "flux"


def parity_ok(term: Term) -> bool:
    """Reflection-symmetry rule for the term's slot and kind."""
    pF = term.powers[1]
    if term.slot == "F":
        return pF % 2 == (0 if term.kind == "flux" else 1)
    if term.slot == "S":
        return pF % 2 == 1 if term.kind == "flux" else pF == 0
    if term.slot == "e":
        return term.kind == "flux" and pF % 2 == 1
    if term.slot == "T":
        return term.kind == "source" and pF % 2 == 0
    return False


@dataclass(frozen=True)
class TermLibrary:
    """Ordered term list for one equation slot.

    Attributes
    ----------
    slot : str
        Equation the terms belong to.
    terms : tuple of Term
        Ordered by (kind, i, j, k) exponent indices.
    caps : dict
        ``{"p_tot": ..., "p_max": ...}`` used to build the library.
    convention : str
        Short description of enumeration choices.
    """

    slot: str
    terms: tuple
    caps: dict
    convention: str = ""

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        seen = set()
        for t in self.terms:
            if t.slot != self.slot:
                raise ValueError(f"term {t.name} belongs to slot {t.slot}, not {self.slot}")
            k = (t.kind, t.powers)
            if k in seen:
                raise ValueError(f"duplicate term {t.name}")
            seen.add(k)

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __getitem__(self, i):
        return self.terms[i]

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.terms]

    @property
    def flux_index(self) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.terms) if t.kind == "flux"], dtype=int)

    @property
    def source_index(self) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.terms) if t.kind == "source"], dtype=int)

    @property
    def forced_index(self) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.terms) if t.forced], dtype=int)

    def index(self, kind: str, powers) -> int:
        powers = tuple(powers)
        for i, t in enumerate(self.terms):
            if t.kind == kind and t.powers == powers:
                return i
        raise KeyError(f"no {kind} term with powers {powers}")

    def evaluate(self, fields: Mapping[str, np.ndarray]) -> list[np.ndarray]:
        return [eval_term(t, fields)[0] for t in self.terms]

    def to_dict(self) -> dict:
        return {
            "slot": self.slot,
            "caps": dict(self.caps),
            "convention": self.convention,
            "terms": [t.to_dict() for t in self.terms],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TermLibrary":
        return cls(
            slot=d["slot"],
            terms=tuple(Term.from_dict(t) for t in d["terms"]),
            caps=dict(d.get("caps", {})),
            convention=d.get("convention", ""),
        )

    @classmethod
    def from_json(cls, s: str) -> "TermLibrary":
        return cls.from_dict(json.loads(s))


def build_F_library(p_tot: int = 4, p_max: int = 3) -> TermLibrary:
    """Library for the F equation.

    Fluxes ∂_x(e^i F^{2j} T^k) with 0 ≤ i, j, k ≤ p_max and
    1 ≤ i + j + k ≤ p_tot; sources T^j F for −p_max ≤ j ≤ p_max.
    """
    if p_tot < 1 or p_max < 1:
        raise ValueError("p_tot and p_max must be at least 1")
    terms = []
    for i, j, k in itertools.product(range(p_max + 1), repeat=3):
        if 1 <= i + j + k <= p_tot:
            terms.append(Term("F", "flux", (i, 2 * j, k, 0), key=(0, i, j, k)))
    for j in range(-p_max, p_max + 1):
        terms.append(Term("F", "source", (0, 1, j, 0), key=(1, j, 0, 0)))
    terms.sort(key=lambda t: t.key)
    return TermLibrary("F", tuple(terms), {"p_tot": p_tot, "p_max": p_max}, "flux e^i F^2j T^k; source T^j F")


def build_sigma_library(p_tot: int = 4, p_max: int = 3) -> TermLibrary:
    """Library for the S = σ_E E equation.

    Fluxes ∂_x(F^{2i+1} T^j S^k) with 0 ≤ i, j, k ≤ p_max and i + j + k ≤ p_tot
    (so the bare ∂_x F is included); sources e^i T^j S^k with
    0 ≤ i, j, k ≤ p_max and 1 ≤ i + j + k ≤ p_tot, except the pure energy
    power e^{p_max}.  That term is dropped because at the energy scales of
    the data its column is nearly collinear with the lower e powers.  The
    sources eS, eT, TS and S² are forced.
    """
    if p_tot < 1 or p_max < 1:
        raise ValueError("p_tot and p_max must be at least 1")
    terms = []
    for i, j, k in itertools.product(range(p_max + 1), repeat=3):
        if i + j + k <= p_tot:
            terms.append(Term("S", "flux", (0, 2 * i + 1, j, k), key=(0, i, j, k)))
    for i, j, k in itertools.product(range(p_max + 1), repeat=3):
        if not 1 <= i + j + k <= p_tot:
            continue
        if (i, j, k) == (p_max, 0, 0):
            continue
        powers = (i, 0, j, k)
        terms.append(Term("S", "source", powers, forced=powers in FORCED_SIGMA_SOURCES, key=(1, i, j, k)))
    terms.sort(key=lambda t: t.key)
    return TermLibrary(
        "S",
        tuple(terms),
        {"p_tot": p_tot, "p_max": p_max},
        "flux F^(2i+1) T^j S^k with i+j+k<=p_tot; source e^i T^j S^k with 1<=i+j+k<=p_tot minus e^p_max",
    )


def base_terms() -> dict[str, TermLibrary]:
    """Fixed-form terms of the e and T equations."""
    e_lib = TermLibrary("e", (Term("e", "flux", (0, 1, 0, 0), key=(0, 0, 1, 0)),), {}, "base")
    T_lib = TermLibrary(
        "T",
        (
            Term("T", "source", (0, 0, 1, 0), key=(1, 0, 1, 0)),
            Term("T", "source", (0, 0, 0, 1), key=(1, 0, 0, 1)),
        ),
        {},
        "base",
    )
    return {"e": e_lib, "T": T_lib}


def base_defaults(gamma: float, rho_cv: float, units: UnitSystem = DEFAULT_UNITS) -> np.ndarray:
    """Analytic (w⁰₁, w⁰₂, w⁰₃) = (−1, −α/ρc_V, c/ρc_V)."""
    return np.array([-1.0, -physics.alpha(gamma, units) / rho_cv, units.c / rho_cv])
