import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trtclosure import dataset as D


def make(nx=12, nt=7, seed=0):
    r = np.random.default_rng(seed)
    x = (np.arange(nx) + 0.5) * 0.25
    t = np.arange(nt) * 1e-12
    f = {k: r.random((nx, nt)) + 0.5 for k in D.FIELDS}
    return D.MomentDataset(x, t, f, {"gamma": 1e9, "T_in": 100.0}, {"generator": "test"})


def test_round_trip_bitwise(tmp_path):
    ds = make()
    D.write(ds, tmp_path / "d")
    back = D.read(tmp_path / "d")
    assert back.equals(ds)
    assert back.content_hash() == ds.content_hash()
    assert back.params == ds.params


def test_layout_is_x_fastest(tmp_path):
    ds = make(3, 2)
    D.write(ds, tmp_path / "d")
    raw = np.frombuffer((tmp_path / "d" / "field_e.f64").read_bytes(), "<f8")
    assert np.array_equal(raw[:3], ds.fields["e"][:, 0])


def test_fields_are_read_only():
    ds = make()
    with pytest.raises(ValueError):
        ds.fields["e"][0, 0] = 1.0


def test_shape_and_grid_validation():
    ds = make()
    with pytest.raises(D.DatasetError):
        D.MomentDataset(ds.x, ds.t, {k: v[:-1] for k, v in ds.fields.items()})
    with pytest.raises(D.DatasetError):
        D.MomentDataset(ds.x ** 2, ds.t, ds.fields)
    with pytest.raises(D.DatasetError):
        D.MomentDataset(ds.x, ds.t, {"e": ds.fields["e"]})


def test_read_errors(tmp_path):
    with pytest.raises(D.DatasetError):
        D.read(tmp_path)
    ds = make()
    D.write(ds, tmp_path / "d")
    (tmp_path / "d" / "field_S.f64").write_bytes(b"\0" * 8)
    with pytest.raises(D.DatasetError, match="bytes"):
        D.read(tmp_path / "d")
    meta = json.loads((tmp_path / "d" / "meta.json").read_text())
    meta["schema_version"] = 999
    (tmp_path / "d" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(D.DatasetError, match="schema"):
        D.read(tmp_path / "d")


def test_slice_bounds_inclusive_and_tracked():
    ds = make()
    sl = D.DatasetSlice.from_bounds(ds, x=(ds.x[2], ds.x[5]), t=(0.0, ds.t[3]))
    sub = D.slice_dataset(ds, sl)
    assert sub.shape == (4, 4)
    assert sub.provenance["parent_hash"] == ds.content_hash()
    with pytest.raises(D.DatasetError):
        D.slice_dataset(ds, D.DatasetSlice(0, 50, 0, 2))


def test_slice_composition():
    ds = make()
    outer = D.DatasetSlice(1, 10, 1, 6)
    inner = D.DatasetSlice(2, 5, 0, 3)
    a = D.slice_dataset(D.slice_dataset(ds, outer), inner)
    b = D.slice_dataset(ds, outer.compose(inner))
    assert a.equals(b)


def test_resample_stride_and_linear():
    ds = make(12, 7)
    s = D.resample(ds, 6, 7)
    assert np.array_equal(s.fields["e"], ds.fields["e"][::2])
    lin = D.resample(ds, 5, 7, mode="linear")
    assert lin.x[0] == ds.x[0] and lin.x[-1] == pytest.approx(ds.x[-1])
    with pytest.raises(D.DatasetError):
        D.resample(ds, 5, 7, mode="stride")


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), c=st.floats(-5, 5))
def test_interpolation_exact_on_bilinear_fields(a, b, c):
    x = np.linspace(0.0, 1.0, 9)
    t = np.linspace(0.0, 2.0, 5)
    X, T = np.meshgrid(x, t, indexing="ij")
    f = a * X + b * T + c
    ds = D.MomentDataset(x, t, {k: f for k in D.FIELDS})
    xn, tn = np.linspace(0.1, 0.9, 4), np.linspace(0.0, 2.0, 3)
    out = D.interpolate_to(ds, xn, tn)
    Xn, Tn = np.meshgrid(xn, tn, indexing="ij")
    assert np.allclose(out.fields["e"], a * Xn + b * Tn + c, atol=1e-12)


def test_interpolation_outside_rejected():
    ds = make()
    with pytest.raises(D.DatasetError):
        D.interpolate_to(ds, ds.x + 1.0, ds.t)


def test_export_csv(tmp_path):
    ds = make(3, 2)
    p = D.export_csv(ds, tmp_path / "d.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "x,t,e,F,T,S" and len(lines) == 7
