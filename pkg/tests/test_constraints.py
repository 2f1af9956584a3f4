import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trtclosure import physics
from trtclosure.constraints import (
    SingularNodeWarning,
    audit,
    build_constraints,
    build_equality,
    build_T_equality,
    equilibrium_states,
    violation_excess,
)
from trtclosure.solver import p1_closure
from trtclosure.termlib import build_F_library, build_sigma_library

G_, RCV = 1e9, 8e10
U = physics.DEFAULT_UNITS


@pytest.fixture(scope="module")
def p1():
    return p1_closure(1.0, G_, RCV)


@pytest.fixture(scope="module")
def sets():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingularNodeWarning)
        return {
            slot: build_constraints(lib, G_, RCV, T_max=1000.0, e_max=1e14, F_max=1e20)
            for slot, lib in (("F", build_F_library()), ("S", build_sigma_library()))
        }


def test_equilibrium_states_are_black_body():
    s = equilibrium_states(np.array([0.0, 10.0, 100.0]), G_, RCV)
    assert np.all(s["F"] == 0)
    assert s["S"][2] == pytest.approx(physics.alpha(G_) * 100.0 / U.c)
    assert s["e"][1] == pytest.approx(RCV * 10 + U.a * 1e4)
    with pytest.raises(ValueError):
        equilibrium_states(np.array([-1.0]), G_, RCV)


def test_row_counts(sets):
    F, S = sets["F"], sets["S"]
    assert F.n_equality == 0  # every F source is odd in F
    assert F.meta["hyperbolicity_rows"] == 48
    assert S.n_equality == 6  # T = 0 node gives an all-zero row
    assert S.n_inequality > 0


def test_p1_satisfies_all_constraints(p1, sets):
    for slot, w in (("F", p1.w_F), ("S", p1.w_S)):
        cs = sets[slot]
        r = cs.residuals(w)
        scale = np.max(np.abs(cs.A), initial=0) * np.max(np.abs(w))
        assert r["equality"] <= 1e-12 * max(scale, 1.0)
        assert r["inequality_excess"] <= 1e-8 * np.max(np.abs(cs.C @ w), initial=1.0)


def test_equality_rows_annihilate_equilibrium_sources(p1):
    st_ = equilibrium_states(np.linspace(1, 500, 5), G_, RCV)
    A, meta = build_equality(p1.lib_S, st_)
    assert A.shape[0] == 5
    assert np.max(np.abs(A @ p1.w_S)) <= 1e-12 * np.max(np.abs(A) * np.abs(p1.w_S))


def test_T_equality_rows(p1):
    st_ = equilibrium_states(np.array([0.0, 5.0, 50.0]), G_, RCV)
    A = build_T_equality(st_)
    assert A.shape == (2, 2)
    assert np.max(np.abs(A @ p1.w0[1:])) <= 1e-12 * np.max(np.abs(A[:, 0] * p1.w0[1]))


def test_singular_nodes_warn():
    with pytest.warns(SingularNodeWarning):
        build_constraints(build_F_library(), G_, RCV, 1000.0, 1e14, 1e20)


def random_fields(seed, n=200):
    r = np.random.default_rng(seed)
    T = r.uniform(1, 1000, n)
    return {
        "e": RCV * T + r.uniform(0, 1e13, n),
        "F": r.normal(0, 1e19, n),
        "T": T,
        "S": r.uniform(0, 1e13, n),
    }


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_p1_audit_clean_on_random_states(seed):
    p1 = p1_closure(1.0, G_, RCV)
    rep = audit(p1.lib_F, p1.w_F, p1.lib_S, p1.w_S, random_fields(seed), G_, RCV)
    assert rep["total_violations"] == 0


def test_audit_flags_antidiffusive_flux(p1):
    w = p1.w_F.copy()
    w[p1.lib_F.index("flux", (1, 0, 0, 0))] *= -1  # ∂_e p^F < 0
    rep = audit(p1.lib_F, w, p1.lib_S, p1.w_S, random_fields(1), G_, RCV)
    assert rep["hyperbolicity"]["violations"] == 200
    ex = violation_excess(p1.lib_F, w, random_fields(1), G_, RCV)
    assert np.all(ex > 0)


def test_audit_flags_unstable_relaxation(p1):
    w = p1.w_S.copy()
    w[p1.lib_S.index("source", (0, 0, 0, 1))] *= -1  # S grows
    rep = audit(p1.lib_F, p1.w_F, p1.lib_S, w, random_fields(2), G_, RCV)
    assert rep["S_source_relaxation"]["violations"] > 0
    assert np.all(violation_excess(p1.lib_S, p1.w_S, random_fields(2), G_, RCV) <= 0)
