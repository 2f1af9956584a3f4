"""Gridded moment data (e, F, T, S = σ_E E) with bit-exact persistence.

Fields are held as arrays of shape (N_x, N_t).  On disk each field is one flat
float64 little-endian file with x varying fastest, next to a ``meta.json``
header describing grids, parameters and provenance.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = [
    "FIELDS",
    "SCHEMA_VERSION",
    "DatasetError",
    "MomentDataset",
    "DatasetSlice",
    "write",
    "read",
    "slice_dataset",
    "resample",
    "interpolate_to",
    "export_csv",
]

FIELDS = ("e", "F", "T", "S")
SCHEMA_VERSION = 1
_UNIFORM_RTOL = 1e-12


class DatasetError(Exception):
    """Malformed, inconsistent or unreadable dataset."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{message} [{path}]")
        self.path = None if path is None else str(path)


def _check_uniform(v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1:
        raise DatasetError(f"{name} grid must be a non-empty 1-D array")
    if v.size > 2:
        d = np.diff(v)
        if np.any(d <= 0):
            raise DatasetError(f"{name} grid must be strictly increasing")
        if np.max(np.abs(d - d.mean())) > _UNIFORM_RTOL * max(abs(d.mean()), np.max(np.abs(v))):
            raise DatasetError(f"{name} grid is not uniform")
    return v


@dataclass(frozen=True, eq=False)
class MomentDataset:
    """Moment fields on a uniform space-time grid.

    Attributes
    ----------
    x, t : ndarray
        Uniform grids (cm, s).
    fields : dict
        ``{"e", "F", "T", "S"}`` arrays of shape ``(len(x), len(t))``.
    params : dict
        Problem parameters such as gamma, T_in, T_o, rho_cv, L, n_angles,
        n_groups and the unit system.
    provenance : dict
        Generator id, config hash, creation time and derivation history.
    """

    x: np.ndarray
    t: np.ndarray
    fields: Mapping[str, np.ndarray]
    params: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        x = _check_uniform(self.x, "x")
        t = _check_uniform(self.t, "t")
        missing = [k for k in FIELDS if k not in self.fields]
        if missing:
            raise DatasetError(f"missing fields {missing}")
        shape = (x.size, t.size)
        fields = {}
        for k in FIELDS:
            a = np.asarray(self.fields[k], dtype=np.float64)
            if a.shape != shape:
                raise DatasetError(f"field {k} has shape {a.shape}, expected {shape}")
            a = a.copy()
            a.setflags(write=False)
            fields[k] = a
        x = x.copy()
        t = t.copy()
        x.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.x.size, self.t.size)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0]) if self.x.size > 1 else float("nan")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else float("nan")

    def __getitem__(self, key: str) -> np.ndarray:
        return self.fields[key]

    def state(self, j: int) -> np.ndarray:
        """Stacked (4, N_x) state at time index ``j``."""
        return np.stack([self.fields[k][:, j] for k in FIELDS])

    def content_hash(self) -> str:
        """SHA-256 over grids and field payloads."""
        h = hashlib.sha256()
        h.update(self.x.astype("<f8").tobytes())
        h.update(self.t.astype("<f8").tobytes())
        for k in FIELDS:
            h.update(_payload(self.fields[k]))
        return h.hexdigest()

    def replace(self, **changes) -> "MomentDataset":
        kw = dict(x=self.x, t=self.t, fields=self.fields, params=self.params, provenance=self.provenance)
        kw.update(changes)
        return MomentDataset(**kw)

    def equals(self, other: "MomentDataset") -> bool:
        """Bitwise equality of grids and fields."""
        if self.shape != other.shape:
            return False
        if self.x.tobytes() != other.x.tobytes() or self.t.tobytes() != other.t.tobytes():
            return False
        return all(self.fields[k].tobytes() == other.fields[k].tobytes() for k in FIELDS)


def _payload(a: np.ndarray) -> bytes:
    # x fastest: the (N_t, N_x) C-order layout of the transpose
    return np.ascontiguousarray(np.asarray(a, dtype="<f8").T).tobytes()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def write(dataset: MomentDataset, path) -> Path:
    """Write ``dataset`` into directory ``path`` (created if needed)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = {}
    for k in FIELDS:
        name = f"field_{k}.f64"
        (path / name).write_bytes(_payload(dataset.fields[k]))
        files[k] = name
    meta = {
        "schema_version": SCHEMA_VERSION,
        "shape": list(dataset.shape),
        "dtype": "float64",
        "byte_order": "little",
        "layout": "x_fastest",
        "x": {"start": float(dataset.x[0]), "values": dataset.x.tolist()},
        "t": {"start": float(dataset.t[0]), "values": dataset.t.tolist()},
        "files": files,
        "params": _jsonable(dataset.params),
        "provenance": _jsonable(dataset.provenance),
        "content_hash": dataset.content_hash(),
    }
    tmp = path / "meta.json.tmp"
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path / "meta.json")
    return path


def read(path) -> MomentDataset:
    """Read a dataset written by :func:`write`."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.is_file():
        raise DatasetError("meta.json not found", meta_path)
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"meta.json is not valid JSON: {exc}", meta_path) from exc
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(
            f"schema version {meta.get('schema_version')!r} does not match {SCHEMA_VERSION}", meta_path
        )
    if meta.get("byte_order") != "little" or meta.get("dtype") != "float64":
        raise DatasetError("unsupported payload encoding", meta_path)
    try:
        nx, nt = (int(v) for v in meta["shape"])
        x = np.array(meta["x"]["values"], dtype=np.float64)
        t = np.array(meta["t"]["values"], dtype=np.float64)
        files = meta["files"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"meta.json is missing required entries: {exc}", meta_path) from exc
    if x.size != nx or t.size != nt:
        raise DatasetError("grid lengths do not match declared shape", meta_path)
    fields = {}
    for k in FIELDS:
        if k not in files:
            raise DatasetError(f"no payload declared for field {k}", meta_path)
        fpath = path / files[k]
        if not fpath.is_file():
            raise DatasetError(f"payload file for field {k} is missing", fpath)
        raw = fpath.read_bytes()
        if len(raw) != 8 * nx * nt:
            raise DatasetError(
                f"payload for field {k} has {len(raw)} bytes, expected {8 * nx * nt}", fpath
            )
        fields[k] = np.frombuffer(raw, dtype="<f8").reshape(nt, nx).T.astype(np.float64)
    return MomentDataset(x=x, t=t, fields=fields, params=meta.get("params", {}), provenance=meta.get("provenance", {}))


@dataclass(frozen=True)
class DatasetSlice:
    """Half-open index ranges ``[x_start, x_stop)`` and ``[t_start, t_stop)``."""

    x_start: int
    x_stop: int
    t_start: int
    t_stop: int

    @classmethod
    def from_bounds(cls, dataset: MomentDataset, x=None, t=None) -> "DatasetSlice":
        """Slice whose first and last samples are the grid points nearest to the
        requested physical bounds; both endpoints are included."""

        def rng(grid, b):
            if b is None:
                return 0, grid.size
            lo, hi = b
            i0 = int(np.argmin(np.abs(grid - lo)))
            i1 = int(np.argmin(np.abs(grid - hi)))
            return i0, i1 + 1

        xs = rng(dataset.x, x)
        ts = rng(dataset.t, t)
        return cls(xs[0], xs[1], ts[0], ts[1])

    def validate(self, shape):
        nx, nt = shape
        if not (0 <= self.x_start < self.x_stop <= nx and 0 <= self.t_start < self.t_stop <= nt):
            raise DatasetError(f"slice {self} out of range for shape {shape}")

    def compose(self, inner: "DatasetSlice") -> "DatasetSlice":
        """Slice equivalent to applying ``self`` and then ``inner``."""
        return DatasetSlice(
            self.x_start + inner.x_start,
            self.x_start + inner.x_stop,
            self.t_start + inner.t_start,
            self.t_start + inner.t_stop,
        )


def slice_dataset(dataset: MomentDataset, sl: DatasetSlice) -> MomentDataset:
    """Restrict ``dataset`` to the index ranges of ``sl``."""
    sl.validate(dataset.shape)
    xs = slice(sl.x_start, sl.x_stop)
    ts = slice(sl.t_start, sl.t_stop)
    prov = dict(dataset.provenance)
    prov["parent_hash"] = dataset.content_hash()
    prov["slice"] = [sl.x_start, sl.x_stop, sl.t_start, sl.t_stop]
    return MomentDataset(
        x=dataset.x[xs],
        t=dataset.t[ts],
        fields={k: dataset.fields[k][xs, ts] for k in FIELDS},
        params=dataset.params,
        provenance=prov,
    )


def _interp_axis(values, grid, new, axis):
    # linear interpolation along one axis, values outside the grid rejected
    if new[0] < grid[0] - 1e-12 * abs(grid[-1] - grid[0]) or new[-1] > grid[-1] + 1e-12 * abs(grid[-1] - grid[0]):
        raise DatasetError("interpolation target outside the data grid")
    if grid.size == 1:
        return np.repeat(values, new.size, axis=axis)
    pos = (new - grid[0]) / (grid[1] - grid[0])
    i0 = np.clip(np.floor(pos).astype(int), 0, grid.size - 2)
    w = pos - i0
    a = np.take(values, i0, axis=axis)
    b = np.take(values, i0 + 1, axis=axis)
    shape = [1, 1]
    shape[axis] = -1
    w = w.reshape(shape)
    return a + w * (b - a)


def resample(dataset: MomentDataset, nx: int, nt: int, mode: str = "auto") -> MomentDataset:
    """Resample onto ``nx`` × ``nt`` points.

    ``mode="auto"`` uses stride subsampling along an axis whose length is an
    integer multiple of the target (samples 0, s, 2s, ...), and linear
    interpolation onto an evenly spaced grid spanning the same extent
    otherwise.  ``mode="stride"`` requires commensurate sizes and
    ``mode="linear"`` always interpolates.
    """
    if nx < 1 or nt < 1:
        raise DatasetError("target sizes must be positive")
    if mode not in ("auto", "stride", "linear"):
        raise DatasetError(f"unknown resample mode {mode!r}")
    N = dataset.shape
    fields = {k: dataset.fields[k] for k in FIELDS}
    grids = [dataset.x, dataset.t]
    modes = []
    for axis, n in enumerate((nx, nt)):
        commensurate = N[axis] % n == 0
        if mode == "stride" and not commensurate:
            raise DatasetError(f"axis {axis}: {N[axis]} is not a multiple of {n}")
        if n == N[axis]:
            modes.append("identity")
            continue
        if commensurate and mode != "linear":
            s = N[axis] // n
            idx = np.arange(0, N[axis], s)
            grids[axis] = grids[axis][idx]
            fields = {k: np.take(v, idx, axis=axis) for k, v in fields.items()}
            modes.append(f"stride{s}")
        else:
            g = grids[axis]
            new = np.linspace(g[0], g[-1], n)
            fields = {k: _interp_axis(v, g, new, axis) for k, v in fields.items()}
            grids[axis] = new
            modes.append("linear")
    prov = dict(dataset.provenance)
    prov["parent_hash"] = dataset.content_hash()
    prov["resample"] = {"shape": [nx, nt], "mode": modes}
    return MomentDataset(x=grids[0], t=grids[1], fields=fields, params=dataset.params, provenance=prov)


def interpolate_to(dataset: MomentDataset, x, t) -> MomentDataset:
    """Linear interpolation of all fields onto the grids ``x`` and ``t``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    fields = {}
    for k in FIELDS:
        v = _interp_axis(dataset.fields[k], dataset.x, x, 0)
        fields[k] = _interp_axis(v, dataset.t, t, 1)
    prov = dict(dataset.provenance)
    prov["parent_hash"] = dataset.content_hash()
    prov["resample"] = {"shape": [x.size, t.size], "mode": ["linear", "linear"]}
    return MomentDataset(x=x, t=t, fields=fields, params=dataset.params, provenance=prov)


def export_csv(dataset: MomentDataset, path) -> Path:
    """One row per (x, t) sample with columns x, t, e, F, T, S."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "t", *FIELDS])
        for j, tj in enumerate(dataset.t):
            for i, xi in enumerate(dataset.x):
                w.writerow([repr(float(xi)), repr(float(tj))] + [repr(float(dataset.fields[k][i, j])) for k in FIELDS])
    return path


def new_provenance(generator: str, config: dict | None = None) -> dict:
    """Provenance record with a stable hash of ``config``."""
    blob = json.dumps(_jsonable(config or {}), sort_keys=True).encode()
    return {
        "generator": generator,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
