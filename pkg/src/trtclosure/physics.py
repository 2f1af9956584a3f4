"""Physical constants, Planck radiance, Larsen opacity and its frequency means.

Temperatures are in eV with k = 1, lengths in cm and times in s.  Photon
energies hν are in eV as well.  Radiative energies (radiance, energy density,
flux) are expressed in erg by default; ``UnitSystem.energy_per_ev`` converts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

__all__ = [
    "UnitSystem",
    "DEFAULT_UNITS",
    "OpacitySpec",
    "DomainError",
    "CrossPlanckMean",
    "planck_B",
    "larsen_sigma",
    "sigma_P",
    "alpha",
    "sigma_R",
    "sigma_P_quad",
    "sigma_R_quad",
    "planck_integral",
    "rosseland_integral",
    "sigma_P_cross",
    "kappa_L",
    "kappa_L_approx",
    "planck_cdf",
    "group_planck",
    "group_planck_dT",
    "group_planck_mean_opacity",
    "ROSSELAND_CONSTANT",
    "X_MAX",
]

#: Upper limit of the substituted frequency variable x = hν/kT in quadratures.
X_MAX = 50.0

#: Value of the integral of x⁷e^{2x}(e^x − 1)⁻³ over (0, ∞) as used by the
#: closed-form Rosseland mean.
ROSSELAND_CONSTANT = 5.1047e3


class DomainError(ValueError):
    """Argument outside the domain of a physical function."""


@dataclass(frozen=True)
class UnitSystem:
    """Unit system with eV temperatures, cm, s and a configurable energy unit.

    Attributes
    ----------
    h : float
        Planck constant in eV·s.
    c : float
        Speed of light in cm/s.
    k : float
        Boltzmann constant; fixed to 1 (temperatures are energies in eV).
    energy_per_ev : float
        Size of one eV in the energy unit used for radiative quantities.
        The default is erg; set to 1.0 to express energies in eV.
    """

    h: float = 4.135667696e-15
    c: float = 2.99792458e10
    k: float = 1.0
    energy_per_ev: float = 1.602176634e-12

    def __post_init__(self):
        if self.k != 1.0:
            raise ValueError("temperatures are in eV, k must be exactly 1")
        if self.h <= 0 or self.c <= 0 or self.energy_per_ev <= 0:
            raise ValueError("unit constants must be positive")

    @property
    def ac(self) -> float:
        """Product a·c = 8π⁵k⁴/(15h³c²) in energy/(cm²·s·eV⁴)."""
        return 8.0 * np.pi**5 * self.k**4 / (15.0 * self.h**3 * self.c**2) * self.energy_per_ev

    @property
    def a(self) -> float:
        """Radiation constant in energy/(cm³·eV⁴)."""
        return self.ac / self.c

    @property
    def sigma_sb(self) -> float:
        """Stefan-Boltzmann constant, ac/4."""
        return (
            2.0 * np.pi**5 * self.k**4 / (15.0 * self.h**3 * self.c**2) * self.energy_per_ev
        )

    def to_dict(self) -> dict:
        return {"h": self.h, "c": self.c, "k": self.k, "energy_per_ev": self.energy_per_ev}

    @classmethod
    def from_dict(cls, d: dict) -> "UnitSystem":
        return cls(**{k: float(v) for k, v in d.items()})


DEFAULT_UNITS = UnitSystem()


@dataclass(frozen=True)
class OpacitySpec:
    """Larsen opacity σ(ν, T) = γ/(hν)³ (1 − e^{−hν/kT})."""

    gamma: float
    form: str = "larsen"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"opacity scale gamma must be positive, got {self.gamma}")
        if self.form != "larsen":
            raise ValueError(f"unknown opacity form {self.form!r}")

    def __call__(self, nu, T, units: UnitSystem = DEFAULT_UNITS):
        return larsen_sigma(nu, T, self.gamma, units)


def _positive_temperature(T, name="T"):
    T = np.asarray(T, dtype=float)
    if np.any(~(T > 0)):
        raise DomainError(f"{name} must be strictly positive")
    return T


def planck_B(nu, T, units: UnitSystem = DEFAULT_UNITS):
    """Black-body spectral radiance 2hν³/c² (e^{hν/kT} − 1)⁻¹.

    ``nu`` in Hz, ``T`` in eV.  Returns energy/(cm²·s·Hz·sr); zero where
    T = 0 or ν = 0.
    """
    nu = np.asarray(nu, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(nu < 0) or np.any(T < 0):
        raise DomainError("planck_B requires nu >= 0 and T >= 0")
    nu_b, T_b = np.broadcast_arrays(nu, T)
    out = np.zeros(nu_b.shape)
    ok = (nu_b > 0) & (T_b > 0)
    hnu = units.h * nu_b[ok]
    x = hnu / (units.k * T_b[ok])
    pref = 2.0 * hnu * nu_b[ok] ** 2 / units.c**2 * units.energy_per_ev
    with np.errstate(over="ignore"):
        out[ok] = pref / np.expm1(x)
    return out[()] if out.ndim == 0 else out


def larsen_sigma(nu, T, gamma: float, units: UnitSystem = DEFAULT_UNITS):
    """Larsen opacity γ/(hν)³ (1 − e^{−hν/kT}) in cm⁻¹."""
    nu = np.asarray(nu, dtype=float)
    if np.any(~(nu > 0)):
        raise DomainError("larsen_sigma has a pole at nu = 0; nu must be positive")
    T = _positive_temperature(T)
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    hnu = units.h * nu
    out = gamma / hnu**3 * -np.expm1(-hnu / (units.k * T))
    return out[()] if np.ndim(out) == 0 else out


def sigma_P(T, gamma: float, units: UnitSystem = DEFAULT_UNITS):
    """Planck-mean Larsen opacity 15γ/(π⁴k³T³)."""
    T = _positive_temperature(T)
    out = 15.0 * gamma / (np.pi**4 * units.k**3 * T**3)
    return out[()] if np.ndim(out) == 0 else out


def alpha(gamma: float, units: UnitSystem = DEFAULT_UNITS) -> float:
    """Emission rate coefficient α = 60σ_SB γ/(π⁴k³) so that c·a·σ_P(T)·T⁴ = αT."""
    return 60.0 * units.sigma_sb * gamma / (np.pi**4 * units.k**3)


def sigma_R(T, gamma: float, units: UnitSystem = DEFAULT_UNITS):
    """Closed-form Rosseland-mean Larsen opacity 4π⁴γ/(15 R k³T³).

    ``R`` is :data:`ROSSELAND_CONSTANT`; the prefactor evaluates to about
    5.0886e-3.
    """
    T = _positive_temperature(T)
    out = 4.0 * np.pi**4 / (15.0 * ROSSELAND_CONSTANT) * gamma / (units.k**3 * T**3)
    return out[()] if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# quadratures in x = hν/kT


def _tail_planck(x0: float) -> float:
    # ∫_{x0}^∞ x³/(e^x − 1) dx, leading exponential term; bounds the truncation
    return float(np.exp(-x0) * (x0**3 + 3 * x0**2 + 6 * x0 + 6))


def _quad(f, a, b, points=None):
    val, _ = integrate.quad(f, a, b, points=points, limit=400, epsabs=0.0, epsrel=1e-13)
    return val


def planck_integral(T: float, units: UnitSystem = DEFAULT_UNITS) -> float:
    """Numerical ∫₀^∞ B(ν, T) dν, equal to (ac/4π)T⁴."""
    T = float(_positive_temperature(T))
    core = _quad(lambda x: x**3 / np.expm1(x), 0.0, X_MAX) + _tail_planck(X_MAX)
    kT = units.k * T
    return 2.0 * kT**4 / (units.h**3 * units.c**2) * core * units.energy_per_ev


def _larsen_x(x, eta):
    # σ(ν,T_o)·B(ν,T_in) in x = hν/kT_in, up to constants: (1 − e^{−ηx})/(e^x − 1)
    return -np.expm1(-eta * x) / np.expm1(x)


def sigma_P_quad(T: float, gamma: float, units: UnitSystem = DEFAULT_UNITS) -> float:
    """Planck mean ∫σB dν / ∫B dν evaluated by quadrature."""
    T = float(_positive_temperature(T))
    num = _quad(lambda x: _larsen_x(x, 1.0), 0.0, X_MAX)
    den = _quad(lambda x: x**3 / np.expm1(x), 0.0, X_MAX) + _tail_planck(X_MAX)
    return gamma / (units.k * T) ** 3 * num / den


def rosseland_integral() -> float:
    """Numerical ∫₀^∞ x⁷e^{2x}(e^x − 1)⁻³ dx."""

    def f(x):
        # x⁷ e^{2x}/(e^x−1)³ = x⁷ e^{−x}/(1 − e^{−x})³
        return x**7 * np.exp(-x) / (-np.expm1(-x)) ** 3

    return _quad(f, 0.0, 80.0) + _quad(f, 80.0, 400.0)


def sigma_R_quad(T: float, gamma: float, units: UnitSystem = DEFAULT_UNITS) -> float:
    """Rosseland mean (∫∂_T B dν) / (∫σ⁻¹∂_T B dν) evaluated by quadrature."""
    T = float(_positive_temperature(T))

    # ∂_T B ∝ x⁴eˣ/(eˣ−1)²; 1/σ = (kT x)³/(γ(1−e^{−x}))
    def dB(x):
        return x**4 * np.exp(-x) / np.expm1(-x) ** 2

    def dB_over_sigma(x):
        return x**7 * np.exp(-x) / (-np.expm1(-x)) ** 3

    num = _quad(dB, 0.0, 80.0) + _quad(dB, 80.0, 400.0)
    den = _quad(dB_over_sigma, 0.0, 80.0) + _quad(dB_over_sigma, 80.0, 400.0)
    return gamma / (units.k * T) ** 3 * num / den


class CrossPlanckMean(NamedTuple):
    """Cross-temperature Planck mean of σ(ν, T_o) against B(ν, T_in)."""

    exact: float
    approx: float
    approx_valid: bool


def sigma_P_cross(
    T_o: float, T_in: float, gamma: float, units: UnitSystem = DEFAULT_UNITS
) -> CrossPlanckMean:
    """Planck mean of the cold-material opacity weighted by the drive spectrum.

    ``exact`` is the quadrature of ∫σ(ν,T_o)B(ν,T_in)dν / ∫B(ν,T_in)dν and
    ``approx`` the logarithmic estimate 15γ/(π⁴(kT_in)³)·ln(T_in/T_o), which
    is only meaningful (``approx_valid``) for T_o < T_in.
    """
    T_o = float(_positive_temperature(T_o, "T_o"))
    T_in = float(_positive_temperature(T_in, "T_in"))
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    eta = T_in / T_o
    pts = [p for p in (1.0 / eta, 10.0 / eta, 1.0) if p < X_MAX]
    num = _quad(lambda x: _larsen_x(x, eta), 0.0, X_MAX, points=pts)
    den = _quad(lambda x: x**3 / np.expm1(x), 0.0, X_MAX) + _tail_planck(X_MAX)
    exact = gamma / (units.k * T_in) ** 3 * num / den
    valid = T_o < T_in
    approx = 15.0 * gamma / (np.pi**4 * (units.k * T_in) ** 3) * np.log(eta) if valid else float("nan")
    return CrossPlanckMean(float(exact), float(approx), bool(valid))


def kappa_L(T_o: float, T_in: float, gamma: float, L: float, units: UnitSystem = DEFAULT_UNITS) -> float:
    """Knudsen-type number (L·σ_P,cross)⁻¹ using the exact cross mean."""
    if not L > 0:
        raise DomainError("L must be positive")
    return 1.0 / (L * sigma_P_cross(T_o, T_in, gamma, units).exact)


def kappa_L_approx(T_o: float, T_in: float, gamma: float, L: float, units: UnitSystem = DEFAULT_UNITS) -> float:
    """κ_L from the logarithmic cross-mean estimate (requires T_o < T_in)."""
    if not L > 0:
        raise DomainError("L must be positive")
    cm = sigma_P_cross(T_o, T_in, gamma, units)
    if not cm.approx_valid:
        raise DomainError("logarithmic estimate requires T_o < T_in")
    return 1.0 / (L * cm.approx)


def kappa_L_harmonic(T_o: float, T_in: float, gamma: float, L: float, units: UnitSystem = DEFAULT_UNITS) -> float:
    """κ_L with ln(T_in/T_o) replaced by the harmonic-number sum H(T_in/T_o).

    For integer ratios the cross mean is exactly 15γ/(π⁴(kT_in)³)·H; the
    digamma form extends this to real ratios.  Compared with the plain
    logarithm it restores the missing Euler-Mascheroni constant.
    """
    if not L > 0:
        raise DomainError("L must be positive")
    eta = float(T_in) / float(T_o)
    H = special.digamma(eta + 1.0) + np.euler_gamma
    return 1.0 / (L * 15.0 * gamma / (np.pi**4 * (units.k * T_in) ** 3) * H)


# ---------------------------------------------------------------------------
# frequency-group integrals used by the kinetic solver

_PI4_15 = np.pi**4 / 15.0
# Bernoulli-series coefficients for ∫₀ˣ t³/(eᵗ−1) dt = x³/3 − x⁴/8 + Σ B_2n x^{2n+3}/((2n)!(2n+3))
_B2N = np.array([special.bernoulli(2 * n)[-1] for n in range(1, 12)])
_SMALL_COEF = np.array(
    [_B2N[n - 1] / (special.factorial(2 * n) * (2 * n + 3)) for n in range(1, 12)]
)


def _debye_small(x):
    out = x**3 / 3.0 - x**4 / 8.0
    x2 = x * x
    xp = x**5
    for c in _SMALL_COEF:
        out = out + c * xp
        xp = xp * x2
    return out


def _upper_scaled(x):
    # e^{x}·∫ₓ^∞ t³/(eᵗ−1) dt for x ≥ 2, summing Σ_n e^{−(n−1)x} P_n(x);
    # 21 terms reach double precision at x = 2
    x = np.asarray(x, dtype=float)
    x2 = x * x
    x3 = x2 * x
    out = x3 + 3 * x2 + 6 * x + 6.0
    r = np.exp(-x)
    rn = r.copy()
    for n in range(2, 22):
        out += rn * (x3 / n + 3 * x2 / n**2 + 6 * x / n**3 + 6.0 / n**4)
        rn *= r
    return out


def planck_cdf(x):
    """D(x) = ∫₀ˣ t³/(eᵗ − 1) dt, vectorized; D(∞) = π⁴/15."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 2.0
    out[small] = _debye_small(x[small])
    big = ~small & np.isfinite(x)
    xb = x[big]
    out[big] = _PI4_15 - np.exp(-xb) * _upper_scaled(xb)
    out[np.isinf(x)] = _PI4_15
    return out


def _band_weight(x_lo, x_hi):
    # D(x_hi) − D(x_lo) and the same quantity divided by e^{−x_lo} where x_lo ≥ 2
    x_lo, x_hi = np.broadcast_arrays(np.asarray(x_lo, float), np.asarray(x_hi, float))
    diff = np.empty(x_lo.shape)
    scaled = np.empty(x_lo.shape)
    small = x_lo < 2.0
    diff[small] = planck_cdf(x_hi[small]) - planck_cdf(x_lo[small])
    big = ~small
    xl, xh = x_lo[big], x_hi[big]
    with np.errstate(over="ignore", invalid="ignore"):
        gap = np.exp(-(xh - xl))
        qh = np.where(np.isfinite(xh), _upper_scaled(np.where(np.isfinite(xh), xh, 2.0)), 0.0)
        sc = _upper_scaled(xl) - gap * qh
    scaled[big] = sc
    diff[big] = np.exp(-xl) * sc
    return diff, scaled, small


def group_planck(edges, T, units: UnitSystem = DEFAULT_UNITS):
    """Group-integrated Planck radiance ∫_g B(ν, T) dν.

    Parameters
    ----------
    edges : array of shape (G+1,)
        Group edges in photon energy hν (eV), strictly increasing.
    T : array
        Temperatures (eV), any shape.

    Returns
    -------
    array of shape T.shape + (G,)
    """
    edges = np.asarray(edges, dtype=float)
    T = np.asarray(T, dtype=float)
    Tb = np.maximum(T, 1e-300)[..., None]
    x = edges / (units.k * Tb)
    diff, _, _ = _band_weight(x[..., :-1], x[..., 1:])
    pref = 2.0 * (units.k * Tb) ** 4 / (units.h**3 * units.c**2) * units.energy_per_ev
    out = pref * diff
    return np.where(T[..., None] > 0, out, 0.0)


def group_planck_dT(edges, T, units: UnitSystem = DEFAULT_UNITS):
    """Temperature derivative of :func:`group_planck`."""
    edges = np.asarray(edges, dtype=float)
    T = _positive_temperature(T)
    Tb = T[..., None]
    x = edges / (units.k * Tb)
    diff, _, _ = _band_weight(x[..., :-1], x[..., 1:])
    with np.errstate(over="ignore", invalid="ignore"):
        # x⁴/(eˣ − 1) → 0 at a zero edge and in the far Wien tail
        ok = (x > 0) & (x < 700.0)
        edge_term = np.where(ok, x**4 / np.expm1(np.where(ok, x, 1.0)), 0.0)
    pref = 2.0 * units.k**4 * Tb**3 / (units.h**3 * units.c**2) * units.energy_per_ev
    return pref * (4.0 * diff - (edge_term[..., 1:] - edge_term[..., :-1]))


def group_planck_mean_opacity(edges, T, gamma: float, units: UnitSystem = DEFAULT_UNITS):
    """Planck-weighted group opacity ∫_g σB dν / ∫_g B dν for the Larsen form.

    The numerator is analytic: σB = 2γ/(h²c²) e^{−x}.  For groups far in the
    Wien tail both integrals are evaluated with the common factor e^{−x_lo}
    removed so the ratio stays finite.
    """
    edges = np.asarray(edges, dtype=float)
    T = _positive_temperature(T)
    Tb = T[..., None]
    kT = units.k * Tb
    x = edges / kT
    x_lo, x_hi = x[..., :-1], x[..., 1:]
    diff, scaled, small = _band_weight(x_lo, x_hi)
    with np.errstate(over="ignore", invalid="ignore"):
        num_small = np.exp(-x_lo) - np.exp(-x_hi)
        num_scaled = -np.expm1(-(x_hi - x_lo))
        ratio = np.where(small, num_small / np.where(small, diff, 1.0), num_scaled / np.where(small, 1.0, scaled))
    return gamma / kT**3 * ratio
