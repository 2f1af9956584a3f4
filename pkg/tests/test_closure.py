import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trtclosure import physics
from trtclosure.closure import (
    KAPPA_L_MIN,
    THIN_CLOSURE_LOGLINEAR,
    ClosureModel,
    ClosureValidityWarning,
    LogLinearFitError,
    ParametrizedClosure,
    central_difference,
    fit_loglinear,
    instantiate_at,
    mirror_rhs,
    mirror_state,
    tabulated_closure,
)
from trtclosure.evaluate import training_points
from trtclosure.solver import p1_closure

U = physics.DEFAULT_UNITS


@pytest.fixture(scope="module")
def p1():
    return p1_closure(1.0, 1e9, 8e10)


def random_state(r, n=64):
    T = r.uniform(5, 500, n)
    return np.stack([8e10 * T + r.uniform(0, 1e12, n), r.normal(0, 1e18, n), T, r.uniform(1e9, 1e12, n)])


def test_p1_wave_speed_is_c_over_root3(p1):
    r = np.random.default_rng(0)
    assert np.allclose(p1.wave_speed(random_state(r)), U.c / np.sqrt(3), rtol=1e-12)


def test_p1_equilibria_are_black_body(p1):
    res = p1.equilibrium_residual(np.array([1.0, 10.0, 1000.0]))
    assert np.max(np.abs(res[2:])) <= 1e-12 * physics.alpha(1e9) * 1000.0


def test_flux_and_source_layout(p1):
    r = np.random.default_rng(1)
    u = random_state(r, 5)
    P = p1.flux(u)
    assert np.allclose(P[0], u[1])  # e flux is F
    assert np.all(P[2] == 0)
    assert np.all(p1.source(u)[0] == 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rhs_mirror_equivariance(seed):
    p1 = p1_closure(1.0, 1e9, 8e10)
    r = np.random.default_rng(seed)
    u = random_state(r)
    ddx = central_difference(0.05)
    a = p1.rhs(mirror_state(u), ddx)
    b = mirror_rhs(p1.rhs(u, ddx))
    scale = np.max(np.abs(b), axis=1, keepdims=True)
    assert np.all(np.abs(a - b) <= 1e-12 * scale)


def test_round_trip(tmp_path, p1):
    again = ClosureModel.load(p1.save(tmp_path / "m.json"))
    assert np.array_equal(again.w_F, p1.w_F) and np.array_equal(again.w_S, p1.w_S)
    assert np.array_equal(again.w0, p1.w0)
    assert again.lib_S.names == p1.lib_S.names


def test_invalid_models_rejected(p1):
    with pytest.raises(ValueError):
        ClosureModel(p1.lib_F, p1.lib_S, p1.w_F[:-1], p1.w_S, p1.w0)
    w = p1.w_S.copy()
    w[0] = np.nan
    with pytest.raises(ValueError):
        ClosureModel(p1.lib_F, p1.lib_S, p1.w_F, w, p1.w0)


def test_describe_lists_terms(p1):
    lines = p1.describe()
    assert any("d_x(e)" in l for l in lines)


# ---- log-linear parametrization


def ensemble_from_table(points=None):
    pc = tabulated_closure()
    return pc, [instantiate_at(pc, g, T3, warn=False) for g, T3 in (points or training_points())]


def test_table_has_twelve_terms():
    pc = tabulated_closure()
    assert len(pc.terms) == len(THIN_CLOSURE_LOGLINEAR) == 12


def test_loglinear_round_trip():
    pc, ens = ensemble_from_table()
    back = fit_loglinear(ens, fit_base=False)
    for t in pc.terms:
        f = back.find(t.slot, t.kind, t.powers)
        assert f.w0 == pytest.approx(t.w0, rel=1e-6)
        assert f.eta_T == pytest.approx(t.eta_T, rel=1e-6)
        assert f.eta_gamma == pytest.approx(t.eta_gamma, rel=1e-6)
        assert f.r2 < 1e-10


def test_parametrized_serialization(tmp_path):
    pc, ens = ensemble_from_table()
    back = fit_loglinear(ens)
    again = ParametrizedClosure.load(back.save(tmp_path / "pc.json"))
    a = instantiate_at(back, 3e8, 5e9)
    b = instantiate_at(again, 3e8, 5e9)
    assert np.array_equal(a.w_S, b.w_S) and np.array_equal(a.w0, b.w0)


def test_spline_matches_loglinear_at_samples_and_inside():
    pc, ens = ensemble_from_table()
    fit = fit_loglinear(ens)
    g, T3 = training_points()[4]
    a = instantiate_at(fit, g, T3, method="spline")
    assert np.allclose(a.w_S, ens[4].w_S, rtol=1e-9)
    # data are exactly log-linear, so the quadratic spline reproduces them
    inside = instantiate_at(fit, 10**8.3, 10**9.7, method="spline")
    ref = instantiate_at(fit, 10**8.3, 10**9.7)
    assert np.allclose(inside.w_F, ref.w_F, rtol=1e-8)
    with pytest.raises(ValueError):
        instantiate_at(fit, 1e10, 1e9, method="spline")


def test_fit_errors():
    pc, ens = ensemble_from_table()
    with pytest.raises(LogLinearFitError):
        fit_loglinear(ens[:2])
    same_line = [instantiate_at(pc, 10.0**a, 10.0 ** (a + 1), warn=False) for a in (8.0, 8.5, 9.0)]
    with pytest.raises(LogLinearFitError, match="rank"):
        fit_loglinear(same_line)
    flipped = ens[0]
    w = flipped.w_S.copy()
    j = np.flatnonzero(w)[0]
    w[j] *= -1
    bad = [ClosureModel(flipped.lib_F, flipped.lib_S, flipped.w_F, w, flipped.w0, flipped.params)] + ens[1:]
    with pytest.raises(LogLinearFitError, match="mixed signs"):
        fit_loglinear(bad)


def test_validity_warning_below_threshold():
    pc = tabulated_closure()
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        m = instantiate_at(pc, 1e10, 1e8)
    assert m.params["kappa_L"] < KAPPA_L_MIN
    assert any(issubclass(w.category, ClosureValidityWarning) for w in rec)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ClosureValidityWarning)
        instantiate_at(pc, 1e8, 1e10)
