"""Learned moment closures for 1D thermal radiative transfer.

The pipeline generates kinetic reference data, learns sparse hyperbolic
closures by constrained weak-form regression, runs them with a WENO5 finite
volume solver, and scores them against the reference.
"""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.0.0"

from .closure import ClosureModel, ParametrizedClosure, fit_loglinear, instantiate_at, tabulated_closure
from .dataset import MomentDataset
from .evaluate import metrics, sweep_report
from .kinetic import TransportConfig, run_transport
from .learn import ClosureLearner
from .mstls import MSTLSRegressor
from .solver import HBLSolver, SolverConfig, simulate
from .termlib import build_F_library, build_sigma_library

__all__ = [
    "ClosureLearner",
    "ClosureModel",
    "HBLSolver",
    "MSTLSRegressor",
    "MomentDataset",
    "ParametrizedClosure",
    "SolverConfig",
    "TransportConfig",
    "build_F_library",
    "build_sigma_library",
    "fit_loglinear",
    "instantiate_at",
    "metrics",
    "run_transport",
    "simulate",
    "sweep_report",
    "tabulated_closure",
]
