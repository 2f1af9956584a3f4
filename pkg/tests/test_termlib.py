import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trtclosure.termlib import (
    Term,
    TermEvaluationError,
    TermLibrary,
    base_defaults,
    base_terms,
    build_F_library,
    build_sigma_library,
    monomial,
    parity_ok,
)


def test_library_sizes_default_caps():
    assert len(build_F_library(4, 3)) == 38
    assert len(build_sigma_library(4, 3)) == 62


def test_library_split():
    F = build_F_library(4, 3)
    assert F.flux_index.size == 31 and F.source_index.size == 7
    S = build_sigma_library(4, 3)
    assert S.source_index.size == 30


def test_forced_sigma_sources():
    S = build_sigma_library()
    forced = {S[i].powers for i in S.forced_index}
    assert forced == {(1, 0, 0, 1), (1, 0, 1, 0), (0, 0, 1, 1), (0, 0, 0, 2)}


def test_pure_energy_cube_excluded():
    S = build_sigma_library()
    with pytest.raises(KeyError):
        S.index("source", (3, 0, 0, 0))
    S.index("source", (2, 0, 0, 0))


@pytest.mark.parametrize("builder", [build_F_library, build_sigma_library])
def test_every_term_respects_reflection_parity(builder):
    assert all(parity_ok(t) for t in builder())


@pytest.mark.parametrize("builder", [build_F_library, build_sigma_library])
def test_json_round_trip(builder):
    lib = builder(3, 2)
    again = TermLibrary.from_json(lib.to_json())
    assert again.names == lib.names
    assert [t.forced for t in again] == [t.forced for t in lib]


def test_ordering_is_deterministic():
    assert build_F_library().names == build_F_library().names


def test_duplicate_terms_rejected():
    t = Term("F", "source", (0, 1, 0, 0))
    with pytest.raises(ValueError):
        TermLibrary("F", (t, t), {})


def test_caps_validation():
    with pytest.raises(ValueError):
        build_F_library(0, 3)


def test_monomial_values():
    f = {"e": np.array([2.0]), "F": np.array([3.0]), "T": np.array([4.0]), "S": np.array([5.0])}
    assert monomial((1, 2, -1, 1), f)[0] == pytest.approx(2 * 9 / 4 * 5)


def test_monomial_f_first_convention():
    f = {"e": np.array([1.0]), "F": np.array([0.0]), "T": np.array([0.0]), "S": np.array([1.0])}
    assert monomial((0, 1, -2, 0), f)[0] == 0.0
    with pytest.raises(TermEvaluationError):
        monomial((0, 0, -2, 0), f)


def test_term_derivative():
    c, q = Term("F", "flux", (2, 2, 1, 0)).derivative("e")
    assert c == 2.0 and q == (1, 2, 1, 0)
    assert Term("F", "flux", (0, 2, 1, 0)).derivative("e")[0] == 0.0


def test_base_terms_and_defaults():
    b = base_terms()
    assert len(b["e"]) == 1 and len(b["T"]) == 2
    w = base_defaults(1e9, 8e10)
    assert w[0] == -1.0 and w[1] < 0 < w[2]


@settings(max_examples=50, deadline=None)
@given(
    e=st.floats(0.1, 10.0),
    F=st.floats(-10.0, 10.0).filter(lambda v: abs(v) > 1e-3),
    T=st.floats(0.1, 10.0),
    S=st.floats(0.1, 10.0),
)
def test_library_terms_flip_sign_consistently_under_reflection(e, F, T, S):
    # F-equation fluxes even in F, sources odd; σ fluxes odd, sources even
    for lib in (build_F_library(3, 2), build_sigma_library(3, 2)):
        a = {"e": e, "F": F, "T": T, "S": S}
        b = {"e": e, "F": -F, "T": T, "S": S}
        for t in lib:
            va, vb = monomial(t.powers, a), monomial(t.powers, b)
            assert vb == pytest.approx(t.f_parity * va, rel=1e-12)
