"""Finite-volume forward solver for closed (e, F, T, S) balance laws.

Space: WENO5-JS reconstruction of the cell averages (normalized per variable)
and a local Lax–Friedrichs flux with the wave speed bound of the closure's
flux Jacobian.  Time: Dormand–Prince 5(4) with embedded error control and a
CFL cap.  Two ghost cells per side; at the two boundary interfaces the outer
state is the ghost value itself.

Also provides the P1 and gray-diffusion reference models.
"""
from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from . import physics
from .closure import ClosureModel
from .dataset import FIELDS, MomentDataset, new_provenance
from .physics import DEFAULT_UNITS, UnitSystem
from .termlib import TermEvaluationError, TermLibrary, build_F_library, build_sigma_library

__all__ = [
    "BoundarySpec",
    "SolverConfig",
    "SolverError",
    "ClosureBlowUp",
    "StepSizeUnderflow",
    "HBLSolver",
    "SimulationLog",
    "weno5_reconstruct",
    "simulate",
    "boundary_from_dataset",
    "initial_from_dataset",
    "coarse_grid",
    "p1_closure",
    "GrayDiffusion",
]

log = logging.getLogger(__name__)

N_GHOST = 2
WENO_EPS = 1e-6


class SolverError(RuntimeError):
    """Forward simulation failed."""


class ClosureBlowUp(SolverError):
    """A positive variable went negative; carries the first offending cell."""

    def __init__(self, message, time=None, cell=None, x=None, variable=None):
        super().__init__(message)
        self.time = time
        self.cell = cell
        self.x = x
        self.variable = variable


class StepSizeUnderflow(SolverError):
    """Adaptive step size fell below the floor."""


# ---------------------------------------------------------------------------
# reconstruction


def _weno_right(vm2, vm1, v0, vp1, vp2, eps):
    # value at the right face of the centre cell
    b0 = 13.0 / 12.0 * (vm2 - 2 * vm1 + v0) ** 2 + 0.25 * (vm2 - 4 * vm1 + 3 * v0) ** 2
    b1 = 13.0 / 12.0 * (vm1 - 2 * v0 + vp1) ** 2 + 0.25 * (vm1 - vp1) ** 2
    b2 = 13.0 / 12.0 * (v0 - 2 * vp1 + vp2) ** 2 + 0.25 * (3 * v0 - 4 * vp1 + vp2) ** 2
    a0 = 0.1 / (eps + b0) ** 2
    a1 = 0.6 / (eps + b1) ** 2
    a2 = 0.3 / (eps + b2) ** 2
    q0 = (2 * vm2 - 7 * vm1 + 11 * v0) / 6.0
    q1 = (-vm1 + 5 * v0 + 2 * vp1) / 6.0
    q2 = (2 * v0 + 5 * vp1 - vp2) / 6.0
    return (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)


def weno5_reconstruct(v: np.ndarray, direction: str = "right", eps: float = WENO_EPS) -> np.ndarray:
    """WENO5-JS face values of cell averages ``v`` along the last axis.

    Returns values for cells 2 .. n−3 at their ``right`` (or ``left``) face.
    The left reconstruction is the right one applied to the reversed array,
    so the pair is exactly mirror symmetric.
    """
    v = np.asarray(v, dtype=float)
    if v.shape[-1] < 5:
        raise ValueError("WENO5 needs at least five cells")
    if direction == "left":
        return weno5_reconstruct(v[..., ::-1], "right", eps)[..., ::-1]
    if direction != "right":
        raise ValueError("direction must be 'left' or 'right'")
    n = v.shape[-1]
    s = [v[..., k : n - 4 + k] for k in range(5)]
    return _weno_right(*s, eps)


# ---------------------------------------------------------------------------
# boundaries


_BC_KINDS = ("dirichlet", "copy", "mirror")


@dataclass
class BoundarySpec:
    """Ghost-cell rule for one side of the domain.

    Attributes
    ----------
    kinds : tuple of str
        Per variable (e, F, T, S): ``dirichlet`` (quadratic-in-time fit to the
        samples), ``copy`` (zero gradient) or ``mirror`` (reflection, F odd).
    times : ndarray (n,)
        Sample times for the Dirichlet variables (at least three).
    values : ndarray (n, 4)
        Samples of (e, F, T, S); columns of non-Dirichlet variables are unused.
    """

    kinds: tuple = ("dirichlet", "dirichlet", "copy", "dirichlet")
    times: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        if len(self.kinds) != 4 or any(k not in _BC_KINDS for k in self.kinds):
            raise ValueError(f"kinds must be four of {_BC_KINDS}")
        if "dirichlet" in self.kinds:
            if self.times is None or self.values is None:
                raise ValueError("Dirichlet variables need sample times and values")
            self.times = np.asarray(self.times, float).ravel()
            self.values = np.asarray(self.values, float).reshape(self.times.size, 4)
            if self.times.size < 3:
                raise ValueError("quadratic-in-time boundary fit needs at least three samples")
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("boundary sample times must increase")

    @classmethod
    def constant(cls, state, kinds=("dirichlet", "dirichlet", "copy", "dirichlet")) -> "BoundarySpec":
        st = np.asarray(state, float).reshape(4)
        return cls(kinds, np.array([0.0, 1.0, 2.0]), np.tile(st, (3, 1)))

    @classmethod
    def outflow(cls) -> "BoundarySpec":
        return cls(("copy",) * 4)

    @classmethod
    def reflecting(cls) -> "BoundarySpec":
        return cls(("mirror",) * 4)

    @classmethod
    def from_csv(cls, path, kinds=("dirichlet", "dirichlet", "copy", "dirichlet")) -> "BoundarySpec":
        """Samples from a CSV with header ``t,e,F,T,S``."""
        data = np.genfromtxt(path, delimiter=",", names=True)
        vals = np.column_stack([data[v] for v in FIELDS])
        return cls(kinds, np.asarray(data["t"], float), vals)

    def value(self, t: float) -> np.ndarray:
        """Quadratic interpolation through the three samples nearest ``t``."""
        ts = self.times
        j = int(np.clip(np.searchsorted(ts, t) - 1, 0, ts.size - 3))
        if j + 2 < ts.size - 1 and abs(ts[j + 3] - t) < abs(ts[j] - t):
            j += 1
        t0, t1, t2 = ts[j : j + 3]
        l0 = (t - t1) * (t - t2) / ((t0 - t1) * (t0 - t2))
        l1 = (t - t0) * (t - t2) / ((t1 - t0) * (t1 - t2))
        l2 = (t - t0) * (t - t1) / ((t2 - t0) * (t2 - t1))
        return l0 * self.values[j] + l1 * self.values[j + 1] + l2 * self.values[j + 2]

    def ghosts(self, t: float, inner: np.ndarray) -> np.ndarray:
        """Ghost states (4, 2), ordered outward, from the two cells ``inner``
        (4, 2) ordered inward."""
        g = np.empty((4, N_GHOST))
        dv = self.value(t) if "dirichlet" in self.kinds else None
        for v, kind in enumerate(self.kinds):
            if kind == "dirichlet":
                g[v] = dv[v]
            elif kind == "copy":
                g[v] = inner[v, 0]
            else:
                g[v] = -inner[v] if v == 1 else inner[v]
        return g

    def to_dict(self) -> dict:
        return {
            "kinds": list(self.kinds),
            "times": None if self.times is None else self.times.tolist(),
            "values": None if self.values is None else self.values.tolist(),
        }


def boundary_from_dataset(ds: MomentDataset, side: str) -> BoundarySpec:
    """Dirichlet (e, F, S) samples from the outermost data column; T copied."""
    j = 0 if side == "left" else -1
    vals = np.column_stack([ds.fields[v][j] for v in FIELDS])
    return BoundarySpec(("dirichlet", "dirichlet", "copy", "dirichlet"), ds.t, vals)


def coarse_grid(ds: MomentDataset, factor: int = 2, x_range=None) -> np.ndarray:
    """Cell centres with ``factor`` times the data spacing over ``x_range``
    (default: the cells covered by the data)."""
    dx = ds.dx * factor
    lo, hi = (ds.x[0] - 0.5 * ds.dx, ds.x[-1] + 0.5 * ds.dx) if x_range is None else x_range
    n = int(round((hi - lo) / dx))
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def initial_from_dataset(ds: MomentDataset, x: np.ndarray, j: int = 0) -> np.ndarray:
    """State at time index ``j`` linearly interpolated to cell centres ``x``."""
    return np.stack([np.interp(x, ds.x, ds.fields[v][:, j]) for v in FIELDS])


# ---------------------------------------------------------------------------
# time stepping

# Dormand–Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True)
class SolverConfig:
    """Forward-solver settings.

    Attributes
    ----------
    cfl : float
        Courant number cap h ≤ cfl·Δx / max wave speed.
    rtol, atol : float
        Embedded error tolerances; ``atol`` multiplies a per-variable scale.
    wave_speed : {"local", "global"}
        Lax–Friedrichs speed per interface or the domain maximum.
    max_steps : int
        Hard limit on attempted steps.
    h_min_rel : float
        Step-size floor relative to the horizon.
    check_positivity : bool
        Raise :class:`ClosureBlowUp` when S or T becomes negative.
    """

    cfl: float = 0.5
    rtol: float = 1e-6
    atol: float = 1e-8
    wave_speed: str = "local"
    max_steps: int = 200_000
    h_min_rel: float = 1e-12
    check_positivity: bool = True
    weno_eps: float = WENO_EPS

    def __post_init__(self):
        if not (self.cfl > 0 and self.rtol > 0 and self.atol > 0):
            raise ValueError("cfl and tolerances must be positive")
        if self.wave_speed not in ("local", "global"):
            raise ValueError("wave_speed must be 'local' or 'global'")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SimulationLog:
    """Per-accepted-step diagnostics."""

    times: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    balance: list = field(default_factory=list)
    rejected: int = 0
    wall_time: float = 0.0

    @property
    def max_balance_error(self) -> float:
        return float(max(self.balance)) if self.balance else 0.0

    def to_dict(self) -> dict:
        return {
            "n_steps": len(self.steps),
            "rejected": self.rejected,
            "max_balance_error": self.max_balance_error,
            "min_step": float(min(self.steps)) if self.steps else None,
            "max_step": float(max(self.steps)) if self.steps else None,
            "wall_time": self.wall_time,
        }


_DISSIPATE = np.array([1.0, 1.0, 0.0, 1.0])[:, None]


class HBLSolver:
    """Method-of-lines discretization of one closure on a uniform grid.

    Parameters
    ----------
    model : ClosureModel
        Any object with ``flux``, ``source`` and ``wave_speed``.
    x : ndarray
        Uniform cell centres.
    left, right : BoundarySpec
    config : SolverConfig
    scale : ndarray of shape (4,), optional
        Per-variable magnitudes for WENO normalization and ``atol``.
    """

    def __init__(self, model, x, left: BoundarySpec, right: BoundarySpec, config: SolverConfig = SolverConfig(), scale=None):
        self.model = model
        self.x = np.asarray(x, float)
        if self.x.size < 16:
            raise ValueError("at least 16 cells are required")
        d = np.diff(self.x)
        if np.any(np.abs(d - d.mean()) > 1e-9 * d.mean()):
            raise ValueError("cell centres must be uniform")
        self.dx = float(d.mean())
        self.left, self.right = left, right
        self.config = config
        self.scale = None if scale is None else np.maximum(np.asarray(scale, float), np.finfo(float).tiny)

    def _padded(self, t, u):
        gl = self.left.ghosts(t, u[:, :N_GHOST])
        gr = self.right.ghosts(t, u[:, ::-1][:, :N_GHOST])
        return np.concatenate([gl[:, ::-1], u, gr], axis=1)

    def interface_flux(self, t, u):
        """Numerical fluxes at the n+1 interfaces and the maximum wave speed."""
        n = u.shape[1]
        U = self._padded(t, u)
        sc = self.scale[:, None]
        V = U / sc
        eps = self.config.weno_eps
        # cells 1 .. n+2 of the padded array can be reconstructed (need ±2)
        right = weno5_reconstruct(V, "right", eps) * sc  # right faces of padded cells 2..n+1
        left = weno5_reconstruct(V, "left", eps) * sc  # left faces of padded cells 2..n+1
        uL = np.empty((4, n + 1))
        uR = np.empty((4, n + 1))
        uL[:, 0] = U[:, N_GHOST - 1]
        uL[:, 1:] = right
        uR[:, :n] = left
        uR[:, n] = U[:, N_GHOST + n]
        PL, PR = self.model.flux(uL), self.model.flux(uR)
        sL, sR = self.model.wave_speed(uL), self.model.wave_speed(uR)
        s = np.maximum(sL, sR)
        if self.config.wave_speed == "global":
            s = np.full_like(s, np.max(s))
        Fh = 0.5 * (PL + PR) - 0.5 * s * _DISSIPATE * (uR - uL)
        return Fh, float(np.max(s))

    def rhs(self, t, u):
        """du/dt, interface fluxes and the maximum wave speed."""
        Fh, smax = self.interface_flux(t, u)
        out = -(Fh[:, 1:] - Fh[:, :-1]) / self.dx + self.model.source(u)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite right-hand side")
        return out, Fh, smax

    def default_scale(self, u):
        """Largest magnitude per variable over ``u`` and the boundary samples.

        A vanishing F scale (e.g. a flux-free start) falls back to the largest
        wave speed times the e scale, the natural size of the e flux.
        """
        sc = np.max(np.abs(u), axis=1)
        for bc in (self.left, self.right):
            if bc.values is not None:
                sc = np.maximum(sc, np.max(np.abs(bc.values), axis=0))
        tiny = 1e-200
        if sc[1] <= tiny * max(sc[0], 1.0):
            sc[1] = float(np.max(self.model.wave_speed(u))) * sc[0]
        sc[sc <= tiny] = 1.0
        return sc

    def _check(self, t, u):
        for v, name in ((3, "S"), (2, "T")):
            bad = np.flatnonzero(u[v] < 0)
            if bad.size:
                i = int(bad[0])
                raise ClosureBlowUp(
                    f"closure blow-up: {name} < 0 at cell {i} (x = {self.x[i]:.6g}) at t = {t:.6g}",
                    time=t, cell=i, x=float(self.x[i]), variable=name,
                )

    def run(self, u0, times, callback: Callable | None = None):
        """Integrate from ``times[0]`` and return states at ``times`` (4, n, n_t)."""
        cfg = self.config
        times = np.asarray(times, float)
        u = np.array(u0, dtype=float)
        if u.shape != (4, self.x.size):
            raise ValueError("initial state must have shape (4, n_cells)")
        if not np.all(np.isfinite(u)):
            raise ValueError("initial state must be finite")
        if self.scale is None:
            self.scale = self.default_scale(u)
        if cfg.check_positivity:
            self._check(times[0], u)
        out = np.empty((4, self.x.size, times.size))
        out[..., 0] = u
        slog = SimulationLog()
        t0 = _time.perf_counter()
        t = float(times[0])
        horizon = float(times[-1] - times[0])
        h_min = cfg.h_min_rel * max(horizon, np.finfo(float).tiny)
        k1, Fh1, smax = self.rhs(t, u)
        h = cfg.cfl * self.dx / max(smax, np.finfo(float).tiny)
        if times.size > 1:
            h = min(h, times[1] - times[0])
        atol = cfg.atol * self.scale[:, None]
        nxt = 1
        attempts = 0
        while nxt < times.size:
            attempts += 1
            if attempts > cfg.max_steps:
                raise SolverError(f"step limit {cfg.max_steps} reached at t = {t:.6g}")
            target = times[nxt]
            h_cfl = cfg.cfl * self.dx / max(smax, np.finfo(float).tiny)
            h = min(h, h_cfl, target - t)
            hit = (target - t) <= h * (1 + 1e-12)
            if hit:
                h = target - t
            if h < h_min:
                raise StepSizeUnderflow(f"step size {h:.3g} below floor at t = {t:.6g}")
            try:
                ks = [k1]
                fluxes = [Fh1]
                for i in range(1, 7):
                    ui = u + h * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
                    ki, Fhi, s_new = self.rhs(t + _C[i] * h, ui)
                    ks.append(ki)
                    fluxes.append(Fhi)
            except (FloatingPointError, TermEvaluationError, OverflowError):
                slog.rejected += 1
                h *= 0.25
                continue
            u_new = ui  # seventh stage is the 5th-order solution
            err_vec = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
            sc = atol + cfg.rtol * np.maximum(np.abs(u), np.abs(u_new))
            err = float(np.sqrt(np.mean((err_vec / sc) ** 2)))
            if err > 1.0:
                slog.rejected += 1
                h *= max(0.2, 0.9 * err ** -0.2)
                continue
            bflux = h * sum(b * (F[0, 0] - F[0, -1]) for b, F in zip(_B5, fluxes) if b != 0.0)
            mass_old = np.sum(u[0]) * self.dx
            mass_new = np.sum(u_new[0]) * self.dx
            denom = max(np.sum(np.abs(u_new[0])) * self.dx, np.finfo(float).tiny)
            slog.balance.append(abs(mass_new - mass_old - bflux) / denom)
            t = target if hit else t + h
            u = u_new
            k1, Fh1, smax = ks[6], fluxes[6], s_new
            slog.times.append(t)
            slog.steps.append(h)
            slog.errors.append(err)
            if cfg.check_positivity:
                self._check(t, u)
            if hit:
                out[..., nxt] = u
                if callback is not None:
                    callback(nxt, t, u)
                nxt += 1
            h = h * min(5.0, 0.9 * max(err, 1e-10) ** -0.2)
        slog.wall_time = _time.perf_counter() - t0
        return out, slog


def simulate(
    model,
    x,
    u0,
    times,
    left: BoundarySpec,
    right: BoundarySpec,
    config: SolverConfig = SolverConfig(),
    scale=None,
) -> tuple[MomentDataset, SimulationLog]:
    """Run ``model`` and return the outputs as a MomentDataset plus the log."""
    solver = HBLSolver(model, x, left, right, config, scale)
    out, slog = solver.run(u0, times)
    params = dict(getattr(model, "params", {}) or {})
    prov = new_provenance("hbl_solver", {"solver": config.to_dict(), "n_cells": int(np.size(x))})
    prov["model"] = dict(getattr(model, "provenance", {}) or {})
    prov["log"] = slog.to_dict()
    ds = MomentDataset(
        np.asarray(x, float),
        np.asarray(times, float),
        {v: out[i] for i, v in enumerate(FIELDS)},
        params,
        prov,
    )
    return ds, slog


# ---------------------------------------------------------------------------
# reference closures


def p1_closure(
    sigma0: float,
    gamma: float,
    rho_cv: float,
    sigma_R: float | None = None,
    units: UnitSystem = DEFAULT_UNITS,
    libraries: tuple[TermLibrary, TermLibrary] | None = None,
) -> ClosureModel:
    """P1 moment system with constant absorption ``sigma0`` and emission αT.

    With E = e − ρc_V T and S = σ₀E:

        ∂_t F = −(c²/3) ∂_x e + (c²ρc_V/3) ∂_x T − cσ_R F
        ∂_t S = −σ₀ ∂_x F + σ₀ α T − cσ₀ S
        ρc_V ∂_t T = −αT + cS

    expressed over the standard (4, 3) libraries.
    """
    c = units.c
    al = physics.alpha(gamma, units)
    sR = sigma0 if sigma_R is None else sigma_R
    lib_F, lib_S = libraries if libraries is not None else (build_F_library(4, 3), build_sigma_library(4, 3))
    w_F = np.zeros(len(lib_F))
    w_S = np.zeros(len(lib_S))
    w_F[lib_F.index("flux", (1, 0, 0, 0))] = -c * c / 3.0
    w_F[lib_F.index("flux", (0, 0, 1, 0))] = c * c * rho_cv / 3.0
    w_F[lib_F.index("source", (0, 1, 0, 0))] = -c * sR
    w_S[lib_S.index("flux", (0, 1, 0, 0))] = -sigma0
    w_S[lib_S.index("source", (0, 0, 1, 0))] = sigma0 * al
    w_S[lib_S.index("source", (0, 0, 0, 1))] = -c * sigma0
    w0 = np.array([-1.0, -al / rho_cv, c / rho_cv])
    params = {"gamma": gamma, "rho_cv": rho_cv, "sigma0": sigma0, "sigma_R": sR, "units": units.to_dict()}
    return ClosureModel(lib_F, lib_S, w_F, w_S, w0, params, {"generator": "p1_closure"})


class GrayDiffusion:
    """Gray radiation diffusion with constant opacity ``sigma0``.

        ∂_t E = ∂_x (D ∂_x E) + cσ₀(aT⁴ − E),   D = c/(3σ₀)
        ρc_V ∂_t T = cσ₀(E − aT⁴)

    Advanced by Lie splitting: backward-Euler diffusion (tridiagonal, fixed
    boundary values of E) followed by a backward-Euler exchange step per
    cell, which conserves E + ρc_V T exactly.
    """

    def __init__(self, sigma0: float, rho_cv: float, units: UnitSystem = DEFAULT_UNITS):
        if not (sigma0 > 0 and rho_cv > 0):
            raise ValueError("sigma0 and rho_cv must be positive")
        self.sigma0 = float(sigma0)
        self.rho_cv = float(rho_cv)
        self.units = units

    @property
    def diffusivity(self) -> float:
        return self.units.c / (3.0 * self.sigma0)

    def _diffuse(self, E, dt, dx, E_left, E_right):
        n = E.size
        r = self.diffusivity * dt / dx**2
        ab = np.zeros((3, n))
        ab[0, 1:] = -r
        ab[1, :] = 1 + 2 * r
        ab[2, :-1] = -r
        rhs = E.copy()
        rhs[0] += r * E_left
        rhs[-1] += r * E_right
        return linalg.solve_banded((1, 1), ab, rhs)

    def _exchange(self, E, T, dt):
        a, c, s = self.units.a, self.units.c, self.sigma0
        total = E + self.rho_cv * T
        k = c * s * dt
        # E_new = total − ρc_V T_new;  ρc_V (T_new − T) = k (E_new − a T_new⁴)
        Tn = T.copy()
        for _ in range(60):
            g = self.rho_cv * (Tn - T) - k * (total - self.rho_cv * Tn - a * Tn**4)
            dg = self.rho_cv + k * (self.rho_cv + 4 * a * Tn**3)
            step = g / dg
            Tn = np.maximum(Tn - step, 0.5 * Tn)
            if np.all(np.abs(step) <= 1e-14 * np.maximum(Tn, 1e-300)):
                break
        return total - self.rho_cv * Tn, Tn

    def run(self, x, E0, T0, times, E_left=None, E_right=None, substeps: int = 1) -> MomentDataset:
        """Outputs (e, F, T, S) at ``times`` with F = −D ∂_x E and S = σ₀E."""
        x = np.asarray(x, float)
        dx = float(x[1] - x[0])
        E = np.array(E0, float)
        T = np.array(T0, float)
        El = E[0] if E_left is None else E_left
        Er = E[-1] if E_right is None else E_right
        times = np.asarray(times, float)
        out = {v: np.empty((x.size, times.size)) for v in FIELDS}

        def record(j):
            Ep = np.r_[El, E, Er]
            out["e"][:, j] = E + self.rho_cv * T
            out["F"][:, j] = -self.diffusivity * (Ep[2:] - Ep[:-2]) / (2 * dx)
            out["T"][:, j] = T
            out["S"][:, j] = self.sigma0 * E

        record(0)
        for j in range(1, times.size):
            dt = (times[j] - times[j - 1]) / substeps
            for _ in range(substeps):
                E = self._diffuse(E, dt, dx, El, Er)
                E, T = self._exchange(E, T, dt)
            record(j)
        params = {"sigma0": self.sigma0, "rho_cv": self.rho_cv, "units": self.units.to_dict()}
        return MomentDataset(x, times, out, params, new_provenance("gray_diffusion", params))
