"""Error metrics against reference data and parameter-sweep reports.

For a candidate Û and reference U on the same (x, t) grid:

    err_L1       = Σ_ij |Û − U| / Σ_ij |U|
    err_L1,j     = Σ_i |Û − U| / Σ_i |U|         (per time slice)
    err_Int,j    = |Σ_i (Û − U)| / |Σ_i U|

Slices with a zero denominator are flagged undefined and skipped by every
aggregate.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import physics
from .closure import ClosureValidityWarning, ParametrizedClosure, instantiate_at
from .dataset import FIELDS, MomentDataset, interpolate_to
from .physics import DEFAULT_UNITS, UnitSystem

__all__ = [
    "GridMismatchError",
    "VariableMetrics",
    "MetricReport",
    "metrics",
    "sweep_grid",
    "training_points",
    "SweepPoint",
    "sweep_report",
    "write_sweep",
    "write_timeseries_csv",
]

log = logging.getLogger(__name__)


class GridMismatchError(ValueError):
    """Candidate and reference grids differ."""


@dataclass
class VariableMetrics:
    """Metrics of one variable.

    Attributes
    ----------
    err_L1 : float
        Space-time relative L1 error.
    err_L1_j, err_Int_j : ndarray (N_t,)
        Per-slice errors; NaN where ``undefined`` is set.
    undefined : ndarray of bool (N_t,)
        Slices with a vanishing denominator.
    """

    err_L1: float
    err_L1_j: np.ndarray
    err_Int_j: np.ndarray
    undefined: np.ndarray

    def max_after(self, t: np.ndarray, t0: float, which: str = "L1") -> float:
        """Largest defined per-slice error at times strictly after ``t0``."""
        series = self.err_L1_j if which == "L1" else self.err_Int_j
        sel = (np.asarray(t) > t0) & ~self.undefined
        return float(np.max(series[sel])) if np.any(sel) else float("nan")

    def to_dict(self) -> dict:
        def clean(a):
            return [None if u else float(v) for v, u in zip(a, self.undefined)]

        return {
            "err_L1": self.err_L1,
            "err_L1_j": clean(self.err_L1_j),
            "err_Int_j": clean(self.err_Int_j),
            "undefined_slices": np.flatnonzero(self.undefined).tolist(),
        }


@dataclass
class MetricReport:
    """Per-variable metrics with grid and parameter metadata."""

    variables: dict
    t: np.ndarray
    x: np.ndarray
    params: dict = field(default_factory=dict)
    kappa_L: float | None = None

    def __getitem__(self, v: str) -> VariableMetrics:
        return self.variables[v]

    def summary(self) -> dict:
        return {v: m.err_L1 for v, m in self.variables.items()}

    def to_dict(self) -> dict:
        return {
            "grid": {"n_x": int(self.x.size), "n_t": int(self.t.size), "x": [float(self.x[0]), float(self.x[-1])], "t": [float(self.t[0]), float(self.t[-1])]},
            "params": _plain(self.params),
            "kappa_L": self.kappa_L,
            "metrics": {v: m.to_dict() for v, m in self.variables.items()},
        }


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


def _same_grid(a: MomentDataset, b: MomentDataset) -> bool:
    return (
        a.x.size == b.x.size
        and a.t.size == b.t.size
        and np.allclose(a.x, b.x, rtol=1e-12, atol=1e-12 * max(1.0, float(np.max(np.abs(b.x)))))
        and np.allclose(a.t, b.t, rtol=1e-12, atol=1e-12 * max(1e-300, float(np.max(np.abs(b.t)))))
    )


def _inside(a: MomentDataset, b: MomentDataset) -> bool:
    return a.x[0] >= b.x[0] and a.x[-1] <= b.x[-1] and a.t[0] >= b.t[0] and a.t[-1] <= b.t[-1]


def _variable_metrics(Uh: np.ndarray, U: np.ndarray) -> VariableMetrics:
    diff = Uh - U
    den_tot = np.sum(np.abs(U))
    err = float(np.sum(np.abs(diff)) / den_tot) if den_tot > 0 else float("nan")
    den_l1 = np.sum(np.abs(U), axis=0)
    den_int = np.abs(np.sum(U, axis=0))
    undefined = (den_l1 == 0) | (den_int == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = np.where(undefined, np.nan, np.sum(np.abs(diff), axis=0) / np.where(undefined, 1.0, den_l1))
        it = np.where(undefined, np.nan, np.abs(np.sum(diff, axis=0)) / np.where(undefined, 1.0, den_int))
    return VariableMetrics(err, l1, it, undefined)


def metrics(
    candidate: MomentDataset,
    reference: MomentDataset,
    variables: Sequence[str] = FIELDS,
    resample: bool = False,
) -> MetricReport:
    """Relative L1 and integral errors of ``candidate`` against ``reference``.

    Grids must agree unless ``resample`` is set.  With ``resample`` the
    reference is interpolated onto the candidate grid when that grid lies
    inside the reference one (the usual coarse-solver case), otherwise the
    candidate is interpolated onto the reference grid.
    """
    params = dict(reference.params)
    if not _same_grid(candidate, reference):
        if not resample:
            raise GridMismatchError(
                f"grids differ: candidate {candidate.shape} vs reference {reference.shape}; pass resample=True"
            )
        if _inside(candidate, reference):
            reference = interpolate_to(reference, candidate.x, candidate.t)
        else:
            candidate = interpolate_to(candidate, reference.x, reference.t)
    out = {v: _variable_metrics(np.asarray(candidate.fields[v], float), np.asarray(reference.fields[v], float)) for v in variables}
    kl = None
    p = params
    if {"gamma", "T_in"} <= set(p) and float(p.get("gamma", 0)) > 0:
        units = UnitSystem.from_dict(p["units"]) if isinstance(p.get("units"), Mapping) else DEFAULT_UNITS
        kl = physics.kappa_L(float(p.get("T_o", 1.0)), float(p["T_in"]), float(p["gamma"]), float(p.get("L", 4.0)), units)
    return MetricReport(out, np.asarray(reference.t, float), np.asarray(reference.x, float), p, kl)


def write_timeseries_csv(report: MetricReport, path) -> Path:
    """CSV with columns t and err_L1_j/err_Int_j per variable (blank if undefined)."""
    path = Path(path)
    names = list(report.variables)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"{k}_{v}" for v in names for k in ("err_L1_j", "err_Int_j")])
        for j, t in enumerate(report.t):
            row = [repr(float(t))]
            for v in names:
                m = report.variables[v]
                row += ["", ""] if m.undefined[j] else [repr(float(m.err_L1_j[j])), repr(float(m.err_Int_j[j]))]
            w.writerow(row)
    return path


# ---------------------------------------------------------------------------
# parameter sweep

_LEVELS = (8.0, 8.5, 9.0, 9.5, 10.0)


def sweep_grid() -> list[tuple[float, float]]:
    """The 5 × 5 grid of (γ, T_in³) with log₁₀ levels {8, 8.5, 9, 9.5, 10}."""
    return [(10.0**a, 10.0**b) for a in _LEVELS for b in _LEVELS]


def training_points() -> list[tuple[float, float]]:
    """The nine most optically thin grid points, γ ≤ 1e9 and T_in³ ≥ 1e9."""
    return [(10.0**a, 10.0**b) for a in _LEVELS[:3] for b in _LEVELS[2:]]


def _is_training(point, train) -> bool:
    return any(math.isclose(point[0], g, rel_tol=1e-9) and math.isclose(point[1], t, rel_tol=1e-9) for g, t in train)


@dataclass
class SweepPoint:
    gamma: float
    T_in3: float
    kappa_L: float
    training: bool
    status: str
    errors: dict = field(default_factory=dict)
    message: str = ""

    def row(self) -> dict:
        r = {
            "gamma": self.gamma,
            "T_in3": self.T_in3,
            "kappa_L": self.kappa_L,
            "training": int(self.training),
            "status": self.status,
            "blow_up": int(self.status == "blowup"),
        }
        for v in FIELDS:
            r[f"err_L1_{v}"] = self.errors.get(v, float("nan"))
        return r


def _evaluate_point(args):
    pc_dict, point, ref, training, simulate_kw, ref_units = args
    from .solver import ClosureBlowUp, SolverError, boundary_from_dataset, coarse_grid, initial_from_dataset, simulate

    pc = ParametrizedClosure.from_dict(pc_dict)
    g, T3 = point
    ref_p = pc.reference
    kl = physics.kappa_L(float(ref_p.get("T_o", 1.0)), T3 ** (1 / 3), g, float(ref_p.get("L", 4.0)), ref_units)
    if ref is None:
        return SweepPoint(g, T3, kl, training, "absent")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClosureValidityWarning)
        model = instantiate_at(pc, g, T3)
    x = coarse_grid(ref, simulate_kw.get("coarsen", 2))
    try:
        out, _ = simulate(model, x, initial_from_dataset(ref, x), ref.t, boundary_from_dataset(ref, "left"), boundary_from_dataset(ref, "right"), simulate_kw.get("config") or _default_config())
    except ClosureBlowUp as exc:
        return SweepPoint(g, T3, kl, training, "blowup", message=str(exc))
    except SolverError as exc:
        return SweepPoint(g, T3, kl, training, "error", message=str(exc))
    rep = metrics(out, ref, resample=True)
    return SweepPoint(g, T3, kl, training, "ok", {v: rep[v].err_L1 for v in FIELDS})


def _default_config():
    from .solver import SolverConfig

    return SolverConfig()


def sweep_report(
    pc: ParametrizedClosure,
    references: Mapping[tuple[float, float], MomentDataset | Callable[[], MomentDataset] | None],
    grid: Sequence[tuple[float, float]] | None = None,
    train: Sequence[tuple[float, float]] | None = None,
    n_workers: int | None = None,
    coarsen: int = 2,
    config=None,
) -> list[SweepPoint]:
    """Simulate the instantiated closure at every grid point and score it.

    ``references`` maps (γ, T_in³) to a dataset (or a zero-argument loader);
    missing points are reported as ``absent``.  Points run in a process pool
    when ``n_workers`` > 1.
    """
    grid = sweep_grid() if grid is None else list(grid)
    train = training_points() if train is None else list(train)
    units = UnitSystem.from_dict(pc.reference["units"]) if isinstance(pc.reference.get("units"), Mapping) else DEFAULT_UNITS

    def lookup(pt):
        for k, v in references.items():
            if math.isclose(k[0], pt[0], rel_tol=1e-9) and math.isclose(k[1], pt[1], rel_tol=1e-9):
                return v() if callable(v) else v
        return None

    jobs = [(pc.to_dict(), pt, lookup(pt), _is_training(pt, train), {"coarsen": coarsen, "config": config}, units) for pt in grid]
    if n_workers and n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as ex:
            return list(ex.map(_evaluate_point, jobs))
    return [_evaluate_point(j) for j in jobs]


def write_sweep(points: Sequence[SweepPoint], directory) -> tuple[Path, Path]:
    """Write ``sweep.csv`` and ``sweep.json`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = [p.row() for p in points]
    csv_path = d / "sweep.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["gamma", "T_in3"])
        w.writeheader()
        w.writerows(rows)
    json_path = d / "sweep.json"
    payload = [dict(r, message=p.message) for r, p in zip(rows, points)]
    json_path.write_text(json.dumps(_plain(payload), indent=2, allow_nan=True))
    return csv_path, json_path
