"""Separable compactly supported test functions and the weak-form linear system.

For a model ∂_t u = Σ_j w_j ∂_x f_j + Σ_k w_k g_k every query point q gives
one row of b = G w with

    b_q          = −⟨∂_t ψ_q, u⟩
    G_q,j (flux) = −⟨∂_x ψ_q, f_j⟩
    G_q,k (src)  =  ⟨ψ_q, g_k⟩

where ψ_q(x, t) = φ_x(x − x_q) φ_t(t − t_q) and the inner products are
trapezoidal sums (uniform weights, as the test functions vanish at the ends of
their support).  No derivative of the data is ever formed.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import optimize, signal

from .termlib import VARIABLES, TermLibrary, eval_term

__all__ = [
    "TestFunction",
    "WeakSystem",
    "WeakFormError",
    "changepoint",
    "select_axis_params",
    "select_test_params",
    "build_test_function",
    "query_points",
    "assemble_weak_system",
]

log = logging.getLogger(__name__)


class WeakFormError(ValueError):
    """Invalid test-function parameters or query points."""


@dataclass(frozen=True)
class TestFunction:
    """Samples of φ(v) = (1 − (v/a)²)₊^p on a stencil of 2m + 1 points.

    ``a = m·delta``; the two outer samples are zero.  ``values`` and ``deriv``
    are ordered from v = −a to v = a and ``deriv`` is dφ/dv per unit length.
    """

    __test__ = False

    m: int
    p: float
    delta: float
    values: np.ndarray = field(repr=False)
    deriv: np.ndarray = field(repr=False)

    @property
    def a(self) -> float:
        return self.m * self.delta

    @property
    def width(self) -> int:
        return 2 * self.m + 1

    def to_dict(self) -> dict:
        return {"m": self.m, "p": self.p, "delta": self.delta, "a": self.a}


def build_test_function(p: float, m: int, delta: float = 1.0, max_deriv: int = 1) -> TestFunction:
    """Sampled test function of half-width ``m`` samples with spacing ``delta``."""
    if not p > max_deriv:
        raise WeakFormError(f"power p = {p} must exceed the derivative order {max_deriv}")
    if m < 2:
        raise WeakFormError("half-width must be at least 2 samples")
    if not delta > 0:
        raise WeakFormError("sample spacing must be positive")
    a = m * delta
    v = np.arange(-m, m + 1) * delta
    base = np.clip(1.0 - (v / a) ** 2, 0.0, None)
    values = base**p
    deriv = -2.0 * p * v / a**2 * base ** (p - 1)
    values[[0, -1]] = 0.0
    deriv[[0, -1]] = 0.0
    deriv[m] = 0.0
    return TestFunction(m=int(m), p=float(p), delta=float(delta), values=values, deriv=deriv)


def changepoint(y: np.ndarray) -> int:
    """Split index of the best two-segment linear fit to ``y`` (least squares)."""
    y = np.asarray(y, dtype=float)
    n = y.size
    if n < 4:
        return max(1, n // 2)
    k = np.arange(n, dtype=float)
    best, best_s = np.inf, 1
    for s in range(1, n - 2):
        sse = 0.0
        for seg in (slice(0, s + 1), slice(s, n)):
            kk, yy = k[seg], y[seg]
            A = np.vstack([kk, np.ones_like(kk)]).T
            coef, res, *_ = np.linalg.lstsq(A, yy, rcond=None)
            sse += float(np.sum((A @ coef - yy) ** 2))
        if sse < best:
            best, best_s = sse, s
    return best_s


def _spectrum(data: np.ndarray, axis: int) -> np.ndarray:
    # mean magnitude of the one-sided spectrum along ``axis``
    spec = np.abs(np.fft.rfft(data, axis=axis))
    other = tuple(i for i in range(data.ndim) if i != axis)
    return spec.mean(axis=other) if other else spec


def _support_loss(m, k, N, tau, tau_hat):
    # zero when k sits τ̂ standard deviations into φ's spectrum (m in samples)
    return np.log((2 * m - 1) / m**2) * ((2 * np.pi * k * m) ** 2 - 3 * (tau_hat * N) ** 2) - 2 * (
        tau_hat * N
    ) ** 2 * np.log(tau)


def select_axis_params(
    data: np.ndarray,
    axis: int,
    tau: float = 1e-4,
    tau_hat: float = 6.0,
    max_deriv: int = 1,
    max_fraction: float = 1.0 / 3.0,
) -> tuple[int, float, dict]:
    """Half-width ``m`` (samples) and power ``p`` for one axis.

    The corner wavenumber ``k_c`` of the cumulative magnitude spectrum is found
    by a two-segment linear fit.  ``m`` then solves the WSINDy support
    condition, ``p`` makes φ equal ``tau`` at the last interior sample, and
    the half-width is capped at ``max_fraction`` of the axis length.
    """
    if not 0 < tau < 1 or not tau_hat > 0:
        raise WeakFormError("tau must lie in (0, 1) and tau_hat must be positive")
    data = np.asarray(data, dtype=float)
    N = data.shape[axis]
    m_cap = max(2, int(np.floor(max_fraction * (N - 1))))
    spec = _spectrum(data, axis)
    info = {"N": N}
    fallback = spec.size < 4 or not np.any(spec[1:] > 1e-12 * max(spec[0], 1e-300))
    if not fallback:
        cum = np.cumsum(spec)
        cum = cum / cum[-1]
        k_c = changepoint(cum)
        info["k_c"] = int(k_c)
        k_c = max(k_c, 1)
        f = lambda m: _support_loss(m, k_c, N, tau, tau_hat)
        lo, hi = 2.0, float(N)
        if f(lo) * f(hi) < 0:
            m = optimize.brentq(f, lo, hi, xtol=1e-10)
        else:
            m = hi
        m_int = int(min(max(2, round(m)), m_cap))
    else:
        info["fallback"] = True
        m_int = min(max(2, int(round((N - 1) / 10.0))), m_cap)
    if fallback:
        p = 4.0
    else:
        p = float(np.log(tau) / np.log((2 * m_int - 1) / m_int**2))
        p = max(p, max_deriv + 1.0)
    info.update({"m": m_int, "p": p})
    return m_int, p, info


def select_test_params(
    fields: Mapping[str, np.ndarray] | np.ndarray,
    tau: float = 1e-4,
    tau_hat: float = 6.0,
    max_deriv: int = 1,
    x_fraction: float = 1.0 / 3.0,
    t_fraction: float = 1.0 / 3.0,
):
    """Test-function parameters ``((m_x, p_x), (m_t, p_t))`` for gridded data.

    ``fields`` is a mapping of (N_x, N_t) arrays or a single array.  Fields are
    normalized to unit maximum before their spectra are averaged.
    """
    if isinstance(fields, Mapping):
        arrs = [np.asarray(v, float) for v in fields.values()]
    else:
        arrs = [np.asarray(fields, float)]
    stack = []
    for a in arrs:
        s = np.max(np.abs(a))
        stack.append(a / s if s > 0 else a)
    data = np.stack(stack)  # (nf, Nx, Nt)
    mx, px, ix = select_axis_params(data, 1, tau, tau_hat, max_deriv, x_fraction)
    mt, pt, it = select_axis_params(data, 2, tau, tau_hat, max_deriv, t_fraction)
    return (mx, px), (mt, pt), {"x": ix, "t": it}


def query_points(n: int, m: int, stride: int) -> np.ndarray:
    """Centers whose stencils [c − m, c + m] fit inside 0..n−1."""
    if 2 * m + 1 > n:
        raise WeakFormError(f"test-function support {2 * m + 1} exceeds axis length {n}")
    return np.arange(m, n - m, max(1, int(stride)))


def _strides_for(nx, nt, mx, mt, n_terms, ratio=4):
    sx, st = max(1, mx), max(1, mt)
    while True:
        K = query_points(nx, mx, sx).size * query_points(nt, mt, st).size
        if K >= ratio * n_terms or (sx == 1 and st == 1):
            return sx, st
        # refine the coarser direction relative to its support
        if sx / mx >= st / mt and sx > 1:
            sx = max(1, sx // 2)
        elif st > 1:
            st = max(1, st // 2)
        else:
            sx = max(1, sx // 2)


@dataclass
class WeakSystem:
    """Weak-form regression system for one equation.

    Attributes
    ----------
    slot : str
        Evolved variable.
    library : TermLibrary
        Column terms.
    G, b : ndarray
        Regression matrix (K × J) and right-hand side (K,).
    col_norms : ndarray
        ‖G_j‖₂ of the columns as assembled.
    coef_scale : ndarray
        Multiplier turning coefficients of this (nondimensional) system into
        physical coefficients.
    queries : tuple of arrays
        Query-point coordinates (x_q, t_q) in physical units.
    meta : dict
        Test-function and scaling metadata.
    """

    slot: str
    library: TermLibrary
    G: np.ndarray
    b: np.ndarray
    col_norms: np.ndarray
    coef_scale: np.ndarray
    queries: tuple
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.G.shape

    def to_physical(self, w: np.ndarray) -> np.ndarray:
        return np.asarray(w) * self.coef_scale

    def to_scaled(self, w: np.ndarray) -> np.ndarray:
        return np.asarray(w) / self.coef_scale

    def dump(self, path) -> Path:
        """Write ``G`` and ``b`` as little-endian float64 next to a JSON header."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        (path / "G.f64").write_bytes(np.ascontiguousarray(self.G, dtype="<f8").tobytes())
        (path / "b.f64").write_bytes(np.ascontiguousarray(self.b, dtype="<f8").tobytes())
        header = {
            "slot": self.slot,
            "shape": list(self.G.shape),
            "layout": "row_major",
            "library": self.library.to_dict(),
            "col_norms": self.col_norms.tolist(),
            "coef_scale": self.coef_scale.tolist(),
            "meta": self.meta,
        }
        (path / "weak_system.json").write_text(json.dumps(header, indent=2))
        return path


def _operator(n, centers, values):
    # rows: stencil ``values`` centred at each entry of ``centers``
    m = (values.size - 1) // 2
    V = np.zeros((centers.size, n))
    for r, c in enumerate(centers):
        V[r, c - m : c + m + 1] = values
    return V


def _apply(f, Vx, Vt):
    return Vx @ f @ Vt.T


def _apply_fft(f, kx, kt, ix, it):
    kernel = np.outer(kx, kt)
    full = signal.fftconvolve(f, kernel[::-1, ::-1], mode="valid")
    mx = (kx.size - 1) // 2
    mt = (kt.size - 1) // 2
    return full[np.ix_(ix - mx, it - mt)]


def assemble_weak_system(
    fields: Mapping[str, np.ndarray],
    x: np.ndarray,
    t: np.ndarray,
    library: TermLibrary,
    tf_x: TestFunction,
    tf_t: TestFunction,
    stride: tuple[int, int] | None = None,
    scales: Mapping[str, float] | None = None,
    x_scale: float = 1.0,
    t_scale: float = 1.0,
    method: str = "direct",
    min_rows_ratio: int = 4,
) -> WeakSystem:
    """Assemble (G, b) for ``library.slot`` on gridded ``fields``.

    Parameters
    ----------
    fields : mapping
        ``e, F, T, S`` arrays of shape (N_x, N_t).
    x, t : arrays
        Uniform grids.
    library : TermLibrary
        Candidate terms for the slot's equation.
    tf_x, tf_t : TestFunction
        Test functions in samples; their ``delta`` is replaced by the grid
        spacing in scaled units.
    stride : (int, int), optional
        Query-point strides; by default strides start at the half-widths and
        are halved until K ≥ ``min_rows_ratio``·J.
    scales, x_scale, t_scale : optional
        Characteristic sizes; the system is assembled for the scaled
        variables u/ū on x/x̄, t/t̄ and ``coef_scale`` converts back.
    method : {"direct", "fft"}
        Separable matrix products or FFT convolution; both are the same
        quadrature.
    """
    x = np.asarray(x, float)
    t = np.asarray(t, float)
    nx, nt = x.size, t.size
    scales = {v: 1.0 for v in VARIABLES} if scales is None else {v: float(scales.get(v, 1.0)) for v in VARIABLES}
    sf = {}
    for v in VARIABLES:
        a = np.asarray(fields[v], float)
        if a.shape != (nx, nt):
            raise WeakFormError(f"field {v} has shape {a.shape}, expected {(nx, nt)}")
        sf[v] = a / scales[v]
    dxi = (x[1] - x[0]) / x_scale
    dtau = (t[1] - t[0]) / t_scale
    fx = build_test_function(tf_x.p, tf_x.m, dxi)
    ft = build_test_function(tf_t.p, tf_t.m, dtau)
    if stride is None:
        stride = _strides_for(nx, nt, fx.m, ft.m, len(library), min_rows_ratio)
    ix = query_points(nx, fx.m, stride[0])
    it = query_points(nt, ft.m, stride[1])
    w = dxi * dtau
    if method == "direct":
        Vx = _operator(nx, ix, fx.values)
        Vxd = _operator(nx, ix, fx.deriv)
        Vt = _operator(nt, it, ft.values)
        Vtd = _operator(nt, it, ft.deriv)
        src = lambda f: _apply(f, Vx, Vt)
        flx = lambda f: _apply(f, Vxd, Vt)
        dt_ = lambda f: _apply(f, Vx, Vtd)
    elif method == "fft":
        src = lambda f: _apply_fft(f, fx.values, ft.values, ix, it)
        flx = lambda f: _apply_fft(f, fx.deriv, ft.values, ix, it)
        dt_ = lambda f: _apply_fft(f, fx.values, ft.deriv, ix, it)
    else:
        raise WeakFormError(f"unknown method {method!r}")

    cols = []
    coef_scale = np.empty(len(library))
    u_bar = scales[library.slot]
    for j, term in enumerate(library):
        vals, is_flux = eval_term(term, sf)
        if is_flux:
            cols.append(-w * flx(vals).ravel())
            coef_scale[j] = u_bar * x_scale / t_scale
        else:
            cols.append(w * src(vals).ravel())
            coef_scale[j] = u_bar / t_scale
        mono_scale = np.prod([scales[v] ** p for v, p in zip(VARIABLES, term.powers)])
        coef_scale[j] /= mono_scale
    G = np.column_stack(cols) if cols else np.zeros((ix.size * it.size, 0))
    b = -w * dt_(sf[library.slot]).ravel()
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(b))):
        raise WeakFormError("non-finite entries in the weak system")
    XQ, TQ = np.meshgrid(x[ix], t[it], indexing="ij")
    meta = {
        "test_x": fx.to_dict(),
        "test_t": ft.to_dict(),
        "stride": [int(stride[0]), int(stride[1])],
        "n_queries": [int(ix.size), int(it.size)],
        "scales": scales,
        "x_scale": x_scale,
        "t_scale": t_scale,
        "method": method,
    }
    return WeakSystem(
        slot=library.slot,
        library=library,
        G=G,
        b=b,
        col_norms=np.linalg.norm(G, axis=0),
        coef_scale=coef_scale,
        queries=(XQ.ravel(), TQ.ravel()),
        meta=meta,
    )
