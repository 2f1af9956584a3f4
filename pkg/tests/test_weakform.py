import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trtclosure.termlib import Term, TermLibrary, build_F_library
from trtclosure.weakform import (
    WeakFormError,
    assemble_weak_system,
    build_test_function,
    changepoint,
    query_points,
    select_test_params,
)


def wave_fields(nx=128, nt=96, speed=1.5):
    # e = F = sin(x − a t): ∂_t F = −a ∂_x e
    x = np.linspace(0.0, 2 * np.pi, nx)
    t = np.linspace(0.0, 1.0, nt)
    X, T = np.meshgrid(x, t, indexing="ij")
    u = np.sin(X - speed * T) + 2.0
    return x, t, {"e": u, "F": u, "T": np.full_like(u, 2.0), "S": np.ones_like(u)}


@settings(max_examples=30, deadline=None)
@given(p=st.floats(2.0, 12.0), m=st.integers(2, 40))
def test_test_function_shape(p, m):
    tf = build_test_function(p, m, 0.1)
    assert tf.values.size == 2 * m + 1
    assert tf.values[0] == tf.values[-1] == 0.0
    assert tf.values[m] == pytest.approx(1.0)
    assert np.allclose(tf.values, tf.values[::-1])
    assert np.allclose(tf.deriv, -tf.deriv[::-1])


def test_test_function_derivative_matches_fd():
    tf = build_test_function(6.0, 40, 0.05)
    fd = np.gradient(tf.values, 0.05)
    inner = slice(2, -2)
    assert np.allclose(tf.deriv[inner], fd[inner], atol=2e-2 * np.max(np.abs(tf.deriv)))


def test_test_function_validation():
    with pytest.raises(WeakFormError):
        build_test_function(1.0, 10)
    with pytest.raises(WeakFormError):
        build_test_function(4.0, 1)


def test_changepoint_on_piecewise_linear():
    y = np.r_[np.arange(10) * 2.0, 18.0 + 0.1 * np.arange(1, 20)]
    assert changepoint(y) == 9


def test_query_points():
    q = query_points(20, 3, 4)
    assert q[0] == 3 and q[-1] <= 16 and np.all(np.diff(q) == 4)
    with pytest.raises(WeakFormError):
        query_points(5, 3, 1)


def test_select_params_within_caps():
    x, t, f = wave_fields()
    (mx, px), (mt, pt), info = select_test_params(f)
    assert 2 <= mx <= (x.size - 1) // 3 and 2 <= mt <= (t.size - 1) // 3
    assert px > 1 and pt > 1


def test_weak_system_recovers_advection_speed():
    x, t, f = wave_fields()
    lib = TermLibrary("F", (Term("F", "flux", (1, 0, 0, 0)),), {})
    sysm = assemble_weak_system(f, x, t, lib, build_test_function(8.0, 12), build_test_function(8.0, 10), stride=(4, 4))
    w, *_ = np.linalg.lstsq(sysm.G, sysm.b, rcond=None)
    assert sysm.to_physical(w)[0] == pytest.approx(-1.5, rel=1e-4)


def test_scaling_is_undone_by_coef_scale():
    x, t, f = wave_fields()
    lib = TermLibrary("F", (Term("F", "flux", (1, 0, 0, 0)),), {})
    args = (f, x, t, lib, build_test_function(8.0, 12), build_test_function(8.0, 10))
    a = assemble_weak_system(*args, stride=(4, 4))
    b = assemble_weak_system(*args, stride=(4, 4), scales={"e": 3.0, "F": 3.0}, x_scale=6.0, t_scale=1.0)
    wa = a.to_physical(np.linalg.lstsq(a.G, a.b, rcond=None)[0])
    wb = b.to_physical(np.linalg.lstsq(b.G, b.b, rcond=None)[0])
    assert wb == pytest.approx(wa, rel=1e-10)


def test_fft_and_direct_agree():
    x, t, f = wave_fields(64, 48)
    lib = build_F_library(2, 1)
    args = (f, x, t, lib, build_test_function(6.0, 6), build_test_function(6.0, 5))
    a = assemble_weak_system(*args, stride=(3, 3), method="direct")
    b = assemble_weak_system(*args, stride=(3, 3), method="fft")
    assert np.allclose(a.G, b.G, rtol=1e-9, atol=1e-12 * np.max(np.abs(a.G)))
    assert np.allclose(a.b, b.b, rtol=1e-9, atol=1e-12 * np.max(np.abs(a.b)))


def test_automatic_strides_give_enough_rows():
    x, t, f = wave_fields()
    lib = build_F_library()
    s = assemble_weak_system(f, x, t, lib, build_test_function(8.0, 12), build_test_function(8.0, 10))
    assert s.G.shape[0] >= 4 * len(lib) or s.meta["stride"] == [1, 1]


def test_bad_field_shape_rejected():
    x, t, f = wave_fields()
    f["S"] = f["S"][:-1]
    lib = build_F_library(2, 1)
    with pytest.raises(WeakFormError):
        assemble_weak_system(f, x, t, lib, build_test_function(6.0, 6), build_test_function(6.0, 5))
