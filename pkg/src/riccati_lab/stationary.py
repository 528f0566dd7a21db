"""Reversible invariant measures of the scalar Riccati diffusion.

The diffusion ``dX = (2 A X + R - S X^2) dt + eps sqrt(X (U + V X^2)) dW`` on the
positive half-line has the reversible density ``exp(U_eps(x)) / sigma_eps^2(x)``
with the scale potential ``U_eps(x) = 2 int_1^x Lambda / sigma_eps^2``.  Four
parameter regimes admit elementary closed forms; this module evaluates them,
normalizes by quadrature in logarithmic coordinates, tabulates the distribution
function, and draws reproducible samples by inverse-CDF interpolation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator

from . import rng
from .riccati_core import ModelParams, ParameterDomainError

REGIMES = ("UV_pos", "U_pos_V0", "U0_V_pos", "gamma_case")
NAT_DROP = 60.0
QUANTILE_RANGE = (1e-9, 1.0 - 1e-9)
CDF_POINTS = 8193
_SCAN_POINTS = 2**14 + 1


@dataclass(frozen=True)
class Coefficients:
    """Drift and diffusion coefficients without the ``S > 0`` requirement.

    The Gamma regime has ``S = 0``, which `ModelParams` rejects because the
    deterministic flow needs a positive quadratic term.  Stationary densities
    only need the coefficients, so this record accepts ``S >= 0``.
    """

    A: float
    R: float
    S: float
    U: float = 0.0
    V: float = 0.0
    eps: float = 0.0

    def __post_init__(self) -> None:
        for name in ("A", "R", "S", "U", "V", "eps"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterDomainError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, float(value))
        if self.R <= 0:
            raise ParameterDomainError(f"R>0 required, got R={self.R}")
        if self.S < 0 or self.U < 0 or self.V < 0:
            raise ParameterDomainError(f"S, U, V must be >= 0, got S={self.S}, U={self.U}, V={self.V}")

    @classmethod
    def of(cls, params: Union["Coefficients", ModelParams]) -> "Coefficients":
        if isinstance(params, cls):
            return params
        return cls(A=params.A, R=params.R, S=params.S, U=params.U, V=params.V, eps=params.eps)


ParamsLike = Union[Coefficients, ModelParams]


def classify(params: ParamsLike) -> str:
    c = Coefficients.of(params)
    if c.U > 0 and c.V > 0:
        return "UV_pos"
    if c.U > 0 and c.V == 0 and c.S > 0:
        return "U_pos_V0"
    if c.U > 0 and c.V == 0 and c.S == 0 and c.A < 0:
        return "gamma_case"
    if c.U == 0 and c.V > 0 and c.S > 0:
        return "U0_V_pos"
    raise ParameterDomainError(
        f"no invariant-measure regime for U={c.U}, V={c.V}, S={c.S}, A={c.A}: "
        "need U>0 and V>0, U>0=V<S, U>0=V=S>A, or U=0<V with S>0"
    )


def _log_kernel(c: Coefficients, regime: str, x: np.ndarray) -> np.ndarray:
    """Unnormalized log-density, up to a regime-dependent additive constant."""
    e2 = c.eps * c.eps
    if regime == "UV_pos":
        power = 2.0 * c.R / (e2 * c.U) - 1.0
        damping = 1.0 + (c.R / c.U + c.S / c.V) / e2
        twist = 4.0 * c.A / (e2 * math.sqrt(c.U * c.V))
        return (
            power * np.log(x)
            - damping * np.log(c.U + c.V * x * x)
            + twist * np.arctan(x * math.sqrt(c.V / c.U))
        )
    if regime == "U_pos_V0":
        power = 2.0 * c.R / (e2 * c.U) - 1.0
        return power * np.log(x) - c.S / (c.U * e2) * (x - 2.0 * c.A / c.S) ** 2
    if regime == "gamma_case":
        power = 2.0 * c.R / (e2 * c.U) - 1.0
        return power * np.log(x) + 4.0 * c.A / (e2 * c.U) * x
    power = -(2.0 * c.S / (e2 * c.V) + 3.0)
    return power * np.log(x) - c.R / (c.V * e2) * (1.0 / x + 2.0 * c.A / c.R) ** 2


@dataclass(frozen=True)
class StationaryMeasure:
    """A normalized invariant density with its tabulated distribution function.

    ``cdf_grid`` has columns ``(x, cdf)`` covering the quantile range
    ``QUANTILE_RANGE``; ``support_cut`` holds the ``x`` bounds where the
    log-density (in logarithmic coordinates) sits ``NAT_DROP`` below its peak.
    """

    regime: str
    params: Coefficients
    log_norm: float
    cdf_grid: np.ndarray
    support_cut: tuple[float, float]
    log_mode: float

    def log_density(self, x: np.ndarray | float) -> np.ndarray | float:
        return log_density(self, x)

    def pdf(self, x: np.ndarray | float) -> np.ndarray | float:
        return np.exp(log_density(self, x))

    def cdf(self, x: np.ndarray | float) -> np.ndarray | float:
        grid_x, grid_cdf = self.cdf_grid[:, 0], self.cdf_grid[:, 1]
        return np.interp(np.log(x), np.log(grid_x), grid_cdf, left=0.0, right=1.0)


def _log_coordinate_density(c: Coefficients, regime: str, shift: float = 0.0):
    """Log-density of ``log X`` (Jacobian included), optionally tilted by ``exp(shift*y)``."""

    def g(y):
        y = np.asarray(y, dtype=np.float64)
        return _log_kernel(c, regime, np.exp(y)) + (1.0 + shift) * y

    return g


def _peak_and_cut(g) -> tuple[float, float, float, float]:
    """Locate the peak of ``g`` and the points where it has dropped ``NAT_DROP`` nats."""
    ys = np.linspace(-60.0, 60.0, 4801)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        values = g(ys)
    values = np.where(np.isfinite(values), values, -np.inf)
    i = int(np.argmax(values))
    lo_b, hi_b = ys[max(i - 1, 0)], ys[min(i + 1, ys.size - 1)]
    res = optimize.minimize_scalar(lambda y: -float(g(y)), bounds=(lo_b, hi_b), method="bounded",
                                   options={"xatol": 1e-12})
    y_peak = float(res.x)
    g_peak = float(g(y_peak))
    level = g_peak - NAT_DROP

    def crossing(direction: float) -> float:
        step = 1.0
        inner = y_peak
        outer = y_peak + direction * step
        while True:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                val = float(g(outer))
            if not math.isfinite(val) or val < level:
                break
            inner = outer
            step *= 2.0
            outer = y_peak + direction * step
            if step > 4096:
                raise ParameterDomainError("density does not decay: measure is not normalizable")

        def f(y):
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                val = float(g(y))
            return (val if math.isfinite(val) else -1e300) - level

        return optimize.brentq(f, min(inner, outer), max(inner, outer), xtol=1e-12)

    return y_peak, g_peak, crossing(-1.0), crossing(1.0)


def _log_integral(g, y_lo: float, y_peak: float, y_hi: float, g_peak: float) -> float:
    """``log int exp(g)`` over ``[y_lo, y_hi]``, split at the peak."""

    def f(y):
        return math.exp(float(g(y)) - g_peak)

    total = 0.0
    for a, b in ((y_lo, y_peak), (y_peak, y_hi)):
        value, _ = integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=500)
        total += value
    return g_peak + math.log(total)


def build(params: ParamsLike) -> StationaryMeasure:
    c = Coefficients.of(params)
    if c.eps <= 0:
        raise ParameterDomainError("eps>0 required: the noiseless system has no invariant density")
    if c.U > 0 and c.eps * c.eps * c.U / c.R >= 2.0:
        raise ParameterDomainError(
            f"eps^2 U/R = {c.eps * c.eps * c.U / c.R:.6g} must be < 2 (origin not repellent)"
        )
    regime = classify(c)
    g = _log_coordinate_density(c, regime)
    y_peak, g_peak, y_lo, y_hi = _peak_and_cut(g)
    log_norm = _log_integral(g, y_lo, y_peak, y_hi, g_peak)

    scan = np.linspace(y_lo, y_hi, _SCAN_POINTS)
    scan_cdf = integrate.cumulative_simpson(np.exp(g(scan) - log_norm), x=scan, initial=0.0)
    q_lo, q_hi = QUANTILE_RANGE
    y_a = float(np.interp(q_lo, scan_cdf, scan))
    y_b = float(np.interp(q_hi, scan_cdf, scan))
    y_a = max(y_lo, y_a - (scan[1] - scan[0]))
    y_b = min(y_hi, y_b + (scan[1] - scan[0]))
    base = _log_integral(g, y_lo, 0.5 * (y_lo + y_a), y_a, float(g(y_a))) if y_a > y_lo else -np.inf
    offset = math.exp(base - log_norm) if math.isfinite(base) else 0.0

    fine = np.linspace(y_a, y_b, 2 * CDF_POINTS - 1)
    fine_cdf = offset + integrate.cumulative_simpson(np.exp(g(fine) - log_norm), x=fine, initial=0.0)
    ys = fine[::2]
    cdf_values = np.maximum.accumulate(np.clip(fine_cdf[::2], 0.0, 1.0))
    grid = np.column_stack([np.exp(ys), cdf_values])
    return StationaryMeasure(
        regime=regime,
        params=c,
        log_norm=log_norm,
        cdf_grid=grid,
        support_cut=(math.exp(y_lo), math.exp(y_hi)),
        log_mode=y_peak,
    )


def log_density(measure: StationaryMeasure, x: np.ndarray | float) -> np.ndarray | float:
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr <= 0):
        raise ParameterDomainError("log_density is defined for x>0 only")
    out = _log_kernel(measure.params, measure.regime, arr) - measure.log_norm
    return float(out) if np.ndim(x) == 0 else out


def sample(measure: StationaryMeasure, n: int, seed: int, stream: int = 0) -> np.ndarray:
    """Inverse-CDF draws using a monotone cubic interpolant of the quantile function."""
    if n < 1:
        raise ValueError(f"n>=1 required, got {n}")
    grid_x, grid_cdf = measure.cdf_grid[:, 0], measure.cdf_grid[:, 1]
    keep = np.concatenate([[True], np.diff(grid_cdf) > 0])
    quantile = PchipInterpolator(grid_cdf[keep], np.log(grid_x[keep]), extrapolate=False)
    u = np.clip(rng.uniforms(seed, stream, n), grid_cdf[keep][0], grid_cdf[keep][-1])
    return np.exp(quantile(u))


def tail_exponent(params: ParamsLike) -> float:
    """Power of ``x`` governing the density as ``x -> inf`` (``-inf`` for Gaussian-type tails)."""
    c = Coefficients.of(params)
    regime = classify(c)
    if regime in ("UV_pos", "U0_V_pos"):
        return -(3.0 + 2.0 * c.S / (c.eps * c.eps * c.V))
    return -math.inf


def origin_exponent(params: ParamsLike) -> float:
    """Power of ``x`` governing the density as ``x -> 0`` (``+inf`` when it vanishes faster than any power)."""
    c = Coefficients.of(params)
    regime = classify(c)
    if regime == "U0_V_pos":
        return math.inf
    return 2.0 * c.R / (c.eps * c.eps * c.U) - 1.0


def stationary_moment_finite(params: ParamsLike, k: float) -> bool:
    """Whether ``int x^k pi_eps(dx)`` is finite, from the tail and origin exponents."""
    at_infinity = k + tail_exponent(params) < -1.0
    at_origin = k + origin_exponent(params) > -1.0
    return bool(at_infinity and at_origin)


def process_moment_condition(params: ParamsLike, n: float) -> bool:
    """Condition ``(n-1) Vbar eps^2 < 2`` for uniform-in-time moments of the process itself.

    Which moments of the stationary law itself are finite is a separate
    question; see `stationary_moment_finite`.
    """
    c = Coefficients.of(params)
    if c.S == 0:
        return c.V == 0
    return bool((n - 1.0) * (c.V / c.S) * c.eps * c.eps < 2.0)


def moment(measure: StationaryMeasure, k: float) -> float:
    """``int x^k pi_eps(dx)`` by log-coordinate quadrature, or ``+inf`` when it diverges."""
    if k == 0:
        return 1.0
    if not stationary_moment_finite(measure.params, k):
        return math.inf
    g = _log_coordinate_density(measure.params, measure.regime, shift=k)
    y_peak, g_peak, y_lo, y_hi = _peak_and_cut(g)
    return math.exp(_log_integral(g, y_lo, y_peak, y_hi, g_peak) - measure.log_norm)


def stationary_mean_bounds(params: ParamsLike) -> tuple[float, float]:
    """Bracket ``[lower, varpi_+]`` for the stationary mean, valid when ``eps^2 U/R < 1``."""
    c = Coefficients.of(params)
    if c.S <= 0:
        raise ParameterDomainError("S>0 required for the stationary mean bracket")
    e2 = c.eps * c.eps
    Ubar, Vbar = c.U / c.R, c.V / c.S
    if e2 * Ubar >= 1.0:
        raise ParameterDomainError(f"eps^2 Ubar = {e2 * Ubar:.6g} must be < 1")
    root = math.sqrt(c.A * c.A + c.R * c.S)
    upper = (c.A + root) / c.S
    lower = (c.A + math.sqrt(c.A * c.A + c.R * c.S * (1.0 - e2 * Ubar) * (1.0 + e2 * Vbar))) / (
        c.S * (1.0 + e2 * Vbar)
    )
    return lower, upper


def scale_potential(params: ParamsLike, x: np.ndarray | float) -> np.ndarray | float:
    """``U_eps(x) = 2 int_1^x Lambda / sigma_eps^2`` in closed form (reference point 1)."""
    c = Coefficients.of(params)
    regime = classify(c)
    sigma_sq = lambda z: c.eps * c.eps * z * (c.U + c.V * z * z)  # noqa: E731
    arr = np.asarray(x, dtype=np.float64)
    one = np.ones(1)
    out = (_log_kernel(c, regime, arr) + np.log(sigma_sq(arr))) - (
        _log_kernel(c, regime, one) + np.log(sigma_sq(one))
    )[0]
    return float(out) if np.ndim(x) == 0 else out


def speed_density(params: ParamsLike, x: np.ndarray | float) -> np.ndarray | float:
    """``q_eps(x) = 2 exp(U_eps(x)) / sigma_eps^2(x)``."""
    c = Coefficients.of(params)
    arr = np.asarray(x, dtype=np.float64)
    return 2.0 * np.exp(scale_potential(c, arr)) / (c.eps * c.eps * arr * (c.U + c.V * arr * arr))


def scale_derivative(params: ParamsLike, x: np.ndarray | float) -> np.ndarray | float:
    """``s_eps'(x) = exp(-U_eps(x))``."""
    return np.exp(-np.asarray(scale_potential(params, x)))


def export_csv(measure: StationaryMeasure, path: str | Path, n_points: int | None = None) -> Path:
    """Write ``x, pdf, cdf`` rows on the tabulated grid (optionally thinned to ``n_points``)."""
    grid = measure.cdf_grid
    if n_points is not None and n_points < grid.shape[0]:
        idx = np.unique(np.linspace(0, grid.shape[0] - 1, n_points).round().astype(int))
        grid = grid[idx]
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "pdf", "cdf"])
        for x, cdf_value in grid:
            writer.writerow([f"{x:.12g}", f"{math.exp(log_density(measure, x)):.12g}", f"{cdf_value:.12g}"])
    return path
