"""Command-line pipeline: generate | learn | simulate | evaluate | sweep | extrapolate.

Every subcommand reads an optional JSON config (validated against
:data:`CONFIG_SCHEMA`), applies ``--set block.key=value`` overrides, writes
its artifacts into a run directory together with ``manifest.json``, and
exits with 0 on success, 2 on invalid input and 3 on numerical failure (the
latter two print a JSON error record on stderr).
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import dataset as ds_mod
from .closure import ClosureModel, ParametrizedClosure, fit_loglinear, instantiate_at
from .evaluate import GridMismatchError, metrics, sweep_report, write_sweep, write_timeseries_csv
from .kinetic import NegativeTemperatureError, PicardConvergenceError, TransportConfig, run_transport
from .learn import ClosureLearner, LearningError
from .qp import QPError
from .solver import (
    SolverConfig,
    SolverError,
    boundary_from_dataset,
    coarse_grid,
    initial_from_dataset,
    simulate,
)

__all__ = ["main", "CONFIG_SCHEMA", "DEFAULT_CONFIG", "load_config", "WORKERS_ENV"]

log = logging.getLogger("trtclosure")

#: Environment variable holding the worker count for sweeps and λ sweeps.
WORKERS_ENV = "TRTCLOSURE_WORKERS"
CONFIG_VERSION = 1

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_range = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "L": _pos,
                "T_in": _pos,
                "T_o": _pos,
                "gamma": _nonneg,
                "rho_cv": _pos,
                "T_right": {"oneOf": [_pos, {"type": "null"}]},
            },
        },
        "kinetic": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_cells": {"type": "integer", "minimum": 16},
                "dt": _pos,
                "n_steps": {"type": "integer", "minimum": 1},
                "n_angles": {"type": "integer", "minimum": 2},
                "n_groups": {"type": "integer", "minimum": 2},
                "picard_tol": _pos,
            },
        },
        "learning": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p_tot": {"type": "integer", "minimum": 1},
                "p_max": {"type": "integer", "minimum": 1},
                "tau": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "tau_hat": _pos,
                "lambdas": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"min": _pos, "max": _pos, "n": {"type": "integer", "minimum": 1}},
                },
                "x_range": {"oneOf": [_range, {"type": "null"}]},
                "t_range": {"oneOf": [_range, {"type": "null"}]},
                "group": {"type": "boolean"},
                "base": {"enum": ["learn", "analytic"]},
                "constrained": {"type": "boolean"},
                "n_T": {"type": "integer", "minimum": 2},
                "n_boundary": {"type": "integer", "minimum": 0},
                "refine": {"type": "integer", "minimum": 0},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "coarsen": {"type": "integer", "minimum": 1},
                "cfl": _pos,
                "rtol": _pos,
                "atol": _pos,
                "wave_speed": {"enum": ["local", "global"]},
                "x_range": {"oneOf": [_range, {"type": "null"}]},
                "t_final": {"oneOf": [_pos, {"type": "null"}]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma_levels": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "T_in3_levels": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "training": {"type": "array", "items": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2}},
            },
        },
    },
}

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "problem": {"L": 4.0, "T_in": 1000.0, "T_o": 1.0, "gamma": 1e9, "rho_cv": 8.0e10, "T_right": None},
    "kinetic": {"n_cells": 1024, "dt": 1e-12, "n_steps": 200, "n_angles": 8, "n_groups": 32, "picard_tol": 1e-10},
    "learning": {
        "p_tot": 4,
        "p_max": 3,
        "tau": 1e-4,
        "tau_hat": 6.0,
        "lambdas": {"min": 1e-4, "max": 1.0, "n": 100},
        "x_range": [0.0, 2.0],
        "t_range": [0.0, 1e-10],
        "group": True,
        "base": "learn",
        "constrained": True,
        "n_T": 7,
        "n_boundary": 20,
        "refine": 3,
    },
    "solver": {"coarsen": 2, "cfl": 0.5, "rtol": 1e-6, "atol": 1e-8, "wave_speed": "local", "x_range": None, "t_final": None},
    "sweep": {
        "gamma_levels": [8.0, 8.5, 9.0, 9.5, 10.0],
        "T_in3_levels": [8.0, 8.5, 9.0, 9.5, 10.0],
        "training": [[10.0**a, 10.0**b] for a in (8.0, 8.5, 9.0) for b in (9.0, 9.5, 10.0)],
    },
}


class ValidationError(ValueError):
    """Invalid command-line input or configuration."""


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _parse_override(item: str):
    if "=" not in item:
        raise ValidationError(f"override {item!r} must look like block.key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    path = key.split(".")
    node: dict = {}
    cur = node
    for p in path[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[path[-1]] = value
    return node


def load_config(path=None, overrides=()) -> dict:
    """Defaults ← config file ← ``--set`` overrides, validated."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ValidationError("config must be a JSON object")
        cfg = _merge(cfg, user)
    for item in overrides:
        cfg = _merge(cfg, _parse_override(item))
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config invalid at {where}: {exc.message}") from exc
    lp = cfg["learning"]
    if lp["p_max"] > lp["p_tot"]:
        raise ValidationError("learning.p_max must not exceed learning.p_tot")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _workers(arg=None) -> int:
    if arg:
        return int(arg)
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError as exc:
        raise ValidationError(f"{WORKERS_ENV} must be an integer") from exc


class RunDir:
    """Output directory with a manifest of produced artifacts."""

    def __init__(self, path, command: str, cfg: dict):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "argv": sys.argv[1:],
            "version": __version__,
            "config_hash": config_hash(cfg),
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "artifacts": [],
        }
        (self.path / "config.json").write_text(json.dumps(cfg, indent=2))

    def add(self, rel, kind):
        self.manifest["artifacts"].append({"path": str(rel), "kind": kind})

    def close(self, status="ok", **extra):
        self.manifest.update(status=status, finished=time.strftime("%Y-%m-%dT%H:%M:%S"), **extra)
        (self.path / "manifest.json").write_text(json.dumps(self.manifest, indent=2, default=str))


def _transport_config(cfg, gamma=None, T_in=None) -> TransportConfig:
    p, k = cfg["problem"], cfg["kinetic"]
    return TransportConfig(
        length=p["L"],
        n_cells=k["n_cells"],
        n_angles=k["n_angles"],
        n_groups=k["n_groups"],
        dt=k["dt"],
        n_steps=k["n_steps"],
        T_in=p["T_in"] if T_in is None else T_in,
        T_o=p["T_o"],
        rho_cv=p["rho_cv"],
        gamma=p["gamma"] if gamma is None else gamma,
        picard_tol=k["picard_tol"],
        T_right=p["T_right"],
    )


def _solver_config(cfg) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(cfl=s["cfl"], rtol=s["rtol"], atol=s["atol"], wave_speed=s["wave_speed"])


def _read_dataset(path):
    return ds_mod.read(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args, cfg, run: RunDir):
    tc = _transport_config(cfg)
    ds = run_transport(tc)
    ds = ds.replace(provenance={**ds.provenance, "config_hash": run.manifest["config_hash"]})
    out = ds_mod.write(ds, run.path / "dataset")
    run.add("dataset", "MomentDataset")
    return {"dataset": str(out), "shape": list(ds.shape)}


def cmd_learn(args, cfg, run: RunDir):
    lp = cfg["learning"]
    datasets = [_read_dataset(p) for p in args.datasets]
    lam = lp["lambdas"]
    learner = ClosureLearner(
        p_tot=lp["p_tot"],
        p_max=lp["p_max"],
        tau=lp["tau"],
        tau_hat=lp["tau_hat"],
        lambdas=np.logspace(np.log10(lam["min"]), np.log10(lam["max"]), lam["n"]),
        x_range=lp["x_range"],
        t_range=lp["t_range"],
        group=lp["group"],
        base=lp["base"],
        constrained=lp["constrained"],
        n_T=lp["n_T"],
        n_boundary=lp["n_boundary"],
        refine=lp["refine"],
        n_jobs=_workers(args.workers),
    )
    learner.fit(datasets)
    paths = []
    for i, m in enumerate(learner.models_):
        m.provenance["config_hash"] = run.manifest["config_hash"]
        name = f"closure_{i}.json"
        m.save(run.path / name)
        run.add(name, "ClosureModel")
        paths.append(str(run.path / name))
    (run.path / "report.json").write_text(json.dumps(learner.report_, indent=2, default=float))
    run.add("report.json", "LearningReport")
    violations = sum(d["audit"]["total_violations"] for d in learner.report_["datasets"])
    return {"closures": paths, "lambdas": learner.lambdas_, "audit_violations": violations}


def _load_closure(path, gamma=None, T_in3=None):
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") == "ParametrizedClosure":
        if gamma is None or T_in3 is None:
            raise ValidationError("a ParametrizedClosure needs --gamma and --T-in3")
        return instantiate_at(ParametrizedClosure.from_dict(doc), gamma, T_in3)
    return ClosureModel.from_dict(doc)


def cmd_simulate(args, cfg, run: RunDir):
    ref = _read_dataset(args.reference)
    s = cfg["solver"]
    gamma = args.gamma if args.gamma is not None else ref.params.get("gamma")
    T3 = args.T_in3 if args.T_in3 is not None else (float(ref.params["T_in"]) ** 3 if "T_in" in ref.params else None)
    model = _load_closure(args.closure, gamma, T3)
    if s["x_range"] is not None or s["t_final"] is not None:
        x = s["x_range"] or [float(ref.x[0] - 0.5 * ref.dx), float(ref.x[-1] + 0.5 * ref.dx)]
        t = s["t_final"] or float(ref.t[-1])
        ref = ds_mod.slice_dataset(ref, ds_mod.DatasetSlice.from_bounds(ref, x=x, t=(float(ref.t[0]), t)))
    x = coarse_grid(ref, s["coarsen"])
    out, slog = simulate(
        model, x, initial_from_dataset(ref, x), ref.t,
        boundary_from_dataset(ref, "left"), boundary_from_dataset(ref, "right"), _solver_config(cfg),
    )
    out = out.replace(provenance={**out.provenance, "config_hash": run.manifest["config_hash"], "reference": ref.content_hash()})
    ds_mod.write(out, run.path / "simulation")
    run.add("simulation", "MomentDataset")
    return {"simulation": str(run.path / "simulation"), "log": slog.to_dict()}


def cmd_evaluate(args, cfg, run: RunDir):
    cand = _read_dataset(args.candidate)
    ref = _read_dataset(args.reference)
    try:
        rep = metrics(cand, ref, resample=args.resample)
    except GridMismatchError as exc:
        raise ValidationError(str(exc)) from exc
    (run.path / "metrics.json").write_text(json.dumps(rep.to_dict(), indent=2))
    write_timeseries_csv(rep, run.path / "timeseries.csv")
    run.add("metrics.json", "MetricReport")
    run.add("timeseries.csv", "ErrorTimeSeries")
    return {"err_L1": rep.summary()}


def _scan_references(dirs):
    refs = {}
    for d in dirs:
        root = Path(d)
        cands = [root] if (root / "meta.json").exists() else [p.parent for p in root.rglob("meta.json")]
        for c in cands:
            ds = ds_mod.read(c)
            g = float(ds.params["gamma"])
            T3 = float(ds.params["T_in"]) ** 3
            refs[(g, T3)] = ds
    return refs


def cmd_sweep(args, cfg, run: RunDir):
    sw = cfg["sweep"]
    pc = ParametrizedClosure.load(args.closure)
    grid = [(10.0**a, 10.0**b) for a in sw["gamma_levels"] for b in sw["T_in3_levels"]]
    refs = _scan_references(args.references or [])
    points = sweep_report(
        pc, refs, grid, [tuple(p) for p in sw["training"]], _workers(args.workers), cfg["solver"]["coarsen"], _solver_config(cfg)
    )
    csv_p, json_p = write_sweep(points, run.path)
    run.add(csv_p.name, "SweepTable")
    run.add(json_p.name, "SweepTable")
    return {"points": len(points), "status": {s: sum(p.status == s for p in points) for s in ("ok", "blowup", "absent", "error")}}


def cmd_extrapolate(args, cfg, run: RunDir):
    models = [ClosureModel.load(p) for p in args.closures]
    pc = fit_loglinear(models, fit_base=not args.analytic_base)
    pc.save(run.path / "parametrized.json")
    run.add("parametrized.json", "ParametrizedClosure")
    result = {"parametrized": str(run.path / "parametrized.json"), "terms": len(pc.terms)}
    if args.at:
        g, T3 = args.at
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            m = instantiate_at(pc, g, T3)
        m.save(run.path / "instantiated.json")
        run.add("instantiated.json", "ClosureModel")
        result["instantiated"] = str(run.path / "instantiated.json")
        result["warnings"] = [str(w.message) for w in caught]
    return result


COMMANDS = {
    "generate": cmd_generate,
    "learn": cmd_learn,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "extrapolate": cmd_extrapolate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trtclosure", description="Learn and test moment closures for thermal radiative transfer.")
    ap.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="BLOCK.KEY=VALUE", help="override a config key (repeatable)")
    common.add_argument("--run-dir", help="output directory (default runs/<command>-<config hash>)")
    common.add_argument("--workers", type=int, help=f"worker count (default ${WORKERS_ENV} or 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="run the kinetic reference solver")
    p = sub.add_parser("learn", parents=[common], help="learn closures from datasets")
    p.add_argument("datasets", nargs="+")
    p = sub.add_parser("simulate", parents=[common], help="run a closure with IC/BC from a dataset")
    p.add_argument("closure")
    p.add_argument("reference")
    p.add_argument("--gamma", type=float)
    p.add_argument("--T-in3", dest="T_in3", type=float)
    p = sub.add_parser("evaluate", parents=[common], help="error metrics of a candidate against a reference")
    p.add_argument("candidate")
    p.add_argument("reference")
    p.add_argument("--resample", action="store_true", help="interpolate onto a common grid when the grids differ")
    p = sub.add_parser("sweep", parents=[common], help="parameter-grid report of a parametrized closure")
    p.add_argument("closure")
    p.add_argument("--references", nargs="*", help="directories holding reference datasets")
    p = sub.add_parser("extrapolate", parents=[common], help="log-linear fit over learned closures")
    p.add_argument("closures", nargs="+")
    p.add_argument("--at", nargs=2, type=float, metavar=("GAMMA", "T_IN3"))
    p.add_argument("--analytic-base", action="store_true", help="do not fit the e and T coefficients")
    return ap


def _error(kind, exc, code):
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        cfg = load_config(args.config, args.overrides)
        rd = args.run_dir or os.path.join("runs", f"{args.command}-{config_hash(cfg)}")
        run = RunDir(rd, args.command, cfg)
        result = COMMANDS[args.command](args, cfg, run)
        run.close("ok", result=result)
        print(json.dumps({"status": "ok", "run_dir": str(run.path), **result}, default=str))
        return EXIT_OK
    except (ValidationError, ds_mod.DatasetError, jsonschema.ValidationError, FileNotFoundError, KeyError, ValueError, TypeError) as exc:
        if run is not None:
            run.close("validation_error", error=str(exc))
        return _error("validation", exc, EXIT_VALIDATION)
    except (SolverError, QPError, LearningError, PicardConvergenceError, NegativeTemperatureError, FloatingPointError) as exc:
        if run is not None:
            run.close("numerical_error", error=str(exc))
        return _error("numerical", exc, EXIT_NUMERICAL)


if __name__ == "__main__":
    sys.exit(main())
