"""End-to-end closure learning from moment datasets.

:class:`ClosureLearner` slices each dataset to the training window, assembles
the nondimensional weak systems of the F and S equations, builds the
equilibrium / hyperbolicity / source-stability constraints, and selects a
sparse model with (group) MSTLS.  Base coefficients of the e and T equations
are learned by constrained least squares or taken from their analytic values.
"""
from __future__ import annotations

import logging
import time
import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import constraints as cons_mod
from .closure import ClosureModel, central_difference
from .dataset import FIELDS, DatasetSlice, MomentDataset, slice_dataset
from .mstls import DEFAULT_LAMBDAS, LinearConstraints, constrained_lstsq, group_mstls, select_lambda
from .physics import DEFAULT_UNITS, UnitSystem
from .qp import QPProblem, kkt_audit
from .termlib import base_defaults, base_terms, build_F_library, build_sigma_library
from .weakform import assemble_weak_system, build_test_function, select_test_params

__all__ = ["ClosureLearner", "LearningError", "dataset_units"]

log = logging.getLogger(__name__)


class LearningError(RuntimeError):
    """Closure learning failed."""


def dataset_units(ds: MomentDataset) -> UnitSystem:
    u = ds.params.get("units")
    return UnitSystem.from_dict(u) if isinstance(u, dict) else DEFAULT_UNITS


def _boundary_states(ds: MomentDataset, n: int, side: str = "left") -> dict:
    # evenly spaced samples along the inflow column
    j = 0 if side == "left" else -1
    idx = np.unique(np.linspace(0, ds.t.size - 1, n).round().astype(int))
    return {v: np.asarray(ds.fields[v][j, idx], float) for v in FIELDS}


class ClosureLearner(BaseEstimator):
    """Learn ClosureModels from one or several moment datasets.

    Parameters
    ----------
    p_tot, p_max : int
        Library caps.
    tau, tau_hat : float
        Test-function selection parameters.
    lambdas : array-like, optional
        MSTLS threshold grid (default 100 log-spaced points on [1e-4, 1]).
    x_range, t_range : (float, float) or None
        Training window; ``None`` uses the whole axis.
    group : bool
        With several datasets, enforce a shared support (group MSTLS).
    base : {"learn", "analytic"}
        How the e- and T-equation coefficients are obtained.
    constrained : bool
        Impose the equilibrium, hyperbolicity and stability constraints.
    n_T, n_boundary : int
        Equilibrium temperature nodes and inflow-boundary samples.
    refine : int
        Rounds of adding audit-violating data states as extra inequality rows.
    stride : (int, int) or None
        Query-point strides; ``None`` picks them automatically.
    tol, max_iter : float, int
        QP settings.
    n_jobs : int or None
        Threads for the λ sweep.

    Attributes
    ----------
    models_ : list of ClosureModel
    lambdas_ : dict
        Selected λ per equation, one entry per dataset (all equal under
        group sparsity).
    report_ : dict
        Weak-system shapes, constraint counts, KKT and audit summaries.
    """

    def __init__(
        self,
        p_tot=4,
        p_max=3,
        tau=1e-4,
        tau_hat=6.0,
        lambdas=None,
        x_range=None,
        t_range=None,
        group=True,
        base="learn",
        constrained=True,
        n_T=7,
        n_boundary=20,
        refine=3,
        stride=None,
        tol=1e-10,
        max_iter=2000,
        n_jobs=None,
    ):
        self.p_tot = p_tot
        self.p_max = p_max
        self.tau = tau
        self.tau_hat = tau_hat
        self.lambdas = lambdas
        self.x_range = x_range
        self.t_range = t_range
        self.group = group
        self.base = base
        self.constrained = constrained
        self.n_T = n_T
        self.n_boundary = n_boundary
        self.refine = refine
        self.stride = stride
        self.tol = tol
        self.max_iter = max_iter
        self.n_jobs = n_jobs

    # ------------------------------------------------------------------
    def _validate(self, datasets):
        if isinstance(datasets, MomentDataset):
            datasets = [datasets]
        datasets = list(datasets)
        if not datasets:
            raise ValueError("no datasets given")
        for ds in datasets:
            if not isinstance(ds, MomentDataset):
                raise TypeError("datasets must be MomentDataset instances")
            for key in ("gamma", "rho_cv"):
                if key not in ds.params:
                    raise ValueError(f"dataset parameter {key!r} missing")
        if self.base not in ("learn", "analytic"):
            raise ValueError("base must be 'learn' or 'analytic'")
        if self.p_max < 1 or self.p_tot < self.p_max:
            raise ValueError("need 1 <= p_max <= p_tot")
        return datasets

    def _window(self, ds):
        if self.x_range is None and self.t_range is None:
            return ds
        sl = DatasetSlice.from_bounds(ds, x=self.x_range, t=self.t_range)
        return slice_dataset(ds, sl)

    def _prepare(self, ds, libs):
        # weak systems and constraints of one training dataset
        f = {v: np.asarray(ds.fields[v], float) for v in FIELDS}
        (mx, px), (mt, pt), info = select_test_params(f, self.tau, self.tau_hat)
        tfx = build_test_function(px, mx, 1.0)
        tft = build_test_function(pt, mt, 1.0)
        scales = {v: max(float(np.max(np.abs(f[v]))), np.finfo(float).tiny) for v in FIELDS}
        x_scale = float(ds.x[-1] - ds.x[0])
        t_scale = float(ds.t[-1] - ds.t[0])
        kw = dict(stride=self.stride, scales=scales, x_scale=x_scale, t_scale=t_scale)
        systems = {s: assemble_weak_system(f, ds.x, ds.t, lib, tfx, tft, **kw) for s, lib in libs.items()}
        gamma = float(ds.params["gamma"])
        rho_cv = float(ds.params["rho_cv"])
        units = dataset_units(ds)
        T_max = float(np.max(f["T"]))
        e_max = float(np.max(f["e"]))
        F_max = float(np.max(np.abs(f["F"])))
        bstates = _boundary_states(ds, self.n_boundary) if self.n_boundary else None
        csets = {}
        for s, lib in libs.items():
            if s not in ("F", "S"):
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", cons_mod.SingularNodeWarning)
                csets[s] = cons_mod.build_constraints(lib, gamma, rho_cv, T_max, e_max, F_max, bstates, self.n_T, units)
        return {
            "data": ds,
            "systems": systems,
            "constraints": csets,
            "test": {"x": [mx, px], "t": [mt, pt], "selection": _jsonable(info)},
            "gamma": gamma,
            "rho_cv": rho_cv,
            "units": units,
            "T_max": T_max,
        }

    def _linear(self, prep, slot, extra=None):
        J = len(prep["systems"][slot].library)
        if not self.constrained:
            return LinearConstraints(J)
        cs = prep["constraints"][slot]
        s = prep["systems"][slot].coef_scale
        lc = cs.linear(s)
        if extra is not None and extra[0].shape[0]:
            C = np.vstack([lc.C, extra[0] * s])
            d = np.r_[lc.d, extra[1]]
            lc = LinearConstraints(J, lc.A, C, d)
        return lc

    def _regress(self, preps, slot, lib, extras):
        lambdas = DEFAULT_LAMBDAS if self.lambdas is None else np.asarray(self.lambdas, float)
        forced = lib.forced_index.tolist()
        lcs = [self._linear(p, slot, extras[i]) for i, p in enumerate(preps)]
        systems = [(p["systems"][slot].G, p["systems"][slot].b) for p in preps]
        if len(preps) > 1 and self.group:
            lam, ws, path = group_mstls(systems, lcs, lambdas, forced, self.tol, self.max_iter, self.n_jobs)
            lam, path = [lam] * len(preps), [path]
        else:
            ws, lam, path = [], [], []
            for (G, b), lc in zip(systems, lcs):
                l, w, pth = select_lambda(G, b, lambdas, lc, forced, self.tol, self.max_iter, self.n_jobs)
                ws.append(w)
                lam.append(l)
                path.append(pth)
        phys = [p["systems"][slot].to_physical(w) for p, w in zip(preps, ws)]
        kkt = []
        for (G, b), lc, w in zip(systems, lcs, ws):
            sup = np.flatnonzero(w)
            sub = lc.restrict(sup)
            kkt.append(kkt_audit(QPProblem(G[:, sup], b, sub.A, sub.C, sub.d), w[sup]) if sup.size else {})
        return lam, phys, path, kkt

    def _base(self, prep):
        g, r, units = prep["gamma"], prep["rho_cv"], prep["units"]
        w0 = base_defaults(g, r, units)
        if self.base == "analytic":
            return w0, {}
        sys_e = prep["systems"]["e"]
        sys_T = prep["systems"]["T"]
        we = np.linalg.lstsq(sys_e.G, sys_e.b, rcond=None)[0]
        st = cons_mod.equilibrium_states(cons_mod.default_T_grid(prep["T_max"], self.n_T), g, r, units)
        A = cons_mod.build_T_equality(st) * sys_T.coef_scale
        wT, kkt = constrained_lstsq(sys_T.G, sys_T.b, LinearConstraints(2, A), None, self.tol, self.max_iter)
        w0 = np.r_[sys_e.to_physical(we), sys_T.to_physical(wT)]
        return w0, {"kkt_T": kkt}

    # ------------------------------------------------------------------
    def fit(self, datasets, y=None):
        """Learn one ClosureModel per dataset.

        Parameters
        ----------
        datasets : MomentDataset or sequence of MomentDataset
            Training data; each needs ``gamma`` and ``rho_cv`` parameters.
        """
        t0 = time.perf_counter()
        datasets = self._validate(datasets)
        libs = {
            "F": build_F_library(self.p_tot, self.p_max),
            "S": build_sigma_library(self.p_tot, self.p_max),
        }
        bl = base_terms()
        all_libs = dict(libs)
        if self.base == "learn":
            all_libs.update({"e": bl["e"], "T": bl["T"]})
        preps = [self._prepare(self._window(ds), all_libs) for ds in datasets]
        results = {}
        rounds = {}
        for slot in ("F", "S"):
            extras = [(np.zeros((0, len(libs[slot]))), np.zeros(0)) for _ in preps]
            for r in range(self.refine + 1):
                lam, phys, path, kkt = self._regress(preps, slot, libs[slot], extras)
                if not self.constrained or r == self.refine:
                    break
                added = 0
                for i, p in enumerate(preps):
                    C, D = self._violations(p, slot, libs[slot], phys[i])
                    if C.shape[0]:
                        extras[i] = (np.vstack([extras[i][0], C]), np.r_[extras[i][1], D])
                        added += C.shape[0]
                if not added:
                    break
                log.info("slot %s: added %d audit rows (round %d)", slot, added, r + 1)
            results[slot] = (lam, phys, path, kkt)
            rounds[slot] = {"rounds": r, "extra_rows": [int(e[0].shape[0]) for e in extras]}
        self.models_ = []
        self.report_ = {"datasets": [], "wall_time": None}
        for i, (ds, p) in enumerate(zip(datasets, preps)):
            w0, base_info = self._base(p)
            params = {
                k: (v if not isinstance(v, np.generic) else v.item())
                for k, v in ds.params.items()
            }
            params.setdefault("T_in3", float(params.get("T_in", 0.0)) ** 3)
            model = ClosureModel(
                libs["F"], libs["S"], results["F"][1][i], results["S"][1][i], w0, params,
                {"generator": "ClosureLearner", "dataset": ds.content_hash(), "learner": _jsonable(self.get_params())},
            )
            self.models_.append(model)
            aud = cons_mod.audit(
                libs["F"], model.w_F, libs["S"], model.w_S, p["data"].fields, p["gamma"], p["rho_cv"], p["units"]
            )
            rep = {
                "shape_F": list(p["systems"]["F"].G.shape),
                "shape_S": list(p["systems"]["S"].G.shape),
                "test_functions": p["test"],
                "constraints": {s: {"equality": c.n_equality, "inequality": c.n_inequality} for s, c in p["constraints"].items()},
                "constraint_residuals": {
                    s: self._normalized_residuals(p, s, model.w_F if s == "F" else model.w_S) for s in ("F", "S")
                },
                "kkt": {s: results[s][3][i] for s in ("F", "S")},
                "audit": aud,
                "base": base_info,
                "support": {
                    "F": [model.lib_F[j].name for j in np.flatnonzero(model.w_F)],
                    "S": [model.lib_S[j].name for j in np.flatnonzero(model.w_S)],
                },
            }
            self.report_["datasets"].append(_jsonable(rep))
        self.lambdas_ = {s: results[s][0] for s in ("F", "S")}
        self.paths_ = {s: results[s][2] for s in ("F", "S")}
        self.report_["lambdas"] = _jsonable(self.lambdas_)
        self.report_["refinement"] = rounds
        self.report_["wall_time"] = time.perf_counter() - t0
        return self

    def _normalized_residuals(self, prep, slot, w):
        # residuals in the nondimensional coefficients the regression works
        # in, each row scaled to unit max-norm so they are comparable
        scale = prep["systems"][slot].coef_scale
        wt = np.asarray(w, float) / scale
        lc = prep["constraints"][slot].linear(scale)
        out = {"w_inf": float(np.max(np.abs(wt))), "equality": 0.0, "inequality_excess": 0.0}
        if lc.A.shape[0]:
            nA = np.max(np.abs(lc.A), axis=1, keepdims=True)
            out["equality"] = float(np.max(np.abs((lc.A / np.where(nA > 0, nA, 1.0)) @ wt)))
        if lc.C.shape[0]:
            nC = np.max(np.abs(lc.C), axis=1)
            nC = np.where(nC > 0, nC, 1.0)
            out["inequality_excess"] = float(max(0.0, np.max((lc.C @ wt - lc.d) / nC)))
        return out

    def _violations(self, prep, slot, lib, w, max_rows=50):
        # constraint rows at the training points where the audit fails
        ds = prep["data"]
        f = {v: np.asarray(ds.fields[v], float).ravel() for v in FIELDS}
        g, r, units = prep["gamma"], prep["rho_cv"], prep["units"]
        excess = cons_mod.violation_excess(lib, w, f, g, r, units)
        idx = np.flatnonzero(excess > 0)
        if not idx.size:
            return np.zeros((0, len(lib))), np.zeros(0)
        if idx.size > max_rows:
            idx = np.sort(idx[np.argsort(-excess[idx])[:max_rows]])
        states = {v: f[v][idx] for v in FIELDS}
        rows, rhs = [], []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", cons_mod.SingularNodeWarning)
            if slot == "F":
                C, D, _ = cons_mod.build_hyperbolicity_at(lib, states)
                rows.append(C)
                rhs.append(D)
            C, D, _ = cons_mod.build_source_stability(lib, states, g, r, units)
            rows.append(C)
            rhs.append(D)
        return np.vstack(rows), np.concatenate(rhs)

    def predict(self, dataset: MomentDataset, index: int = 0) -> np.ndarray:
        """Model right-hand side on every snapshot of ``dataset``, shape (4, N_x, N_t)."""
        check_is_fitted(self, "models_")
        m = self.models_[index]
        ddx = central_difference(dataset.dx)
        out = np.empty((4,) + dataset.shape)
        for j in range(dataset.t.size):
            out[..., j] = m.rhs(dataset.state(j), ddx)
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
