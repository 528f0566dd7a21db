"""Closed-form layer for one-dimensional Riccati diffusions.

The diffusion is ``dX = Lambda(X) dt + sigma_eps(X) dW`` on ``[0, inf)`` with

    Lambda(x)    = 2 A x + R - S x**2
    sigma_eps(x) = eps * sqrt(x (U + V x**2))

Everything here is deterministic: parameter algebra, the Riccati semigroup
``phi_t(x)`` (the flow of ``dx/dt = Lambda(x)``) and its space derivatives,
transformed parameter families, potential functions, decay rates, the two
weighted metrics and the bound functions for the fluctuation fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy import integrate, special

ArrayLike = float | np.ndarray

FamilyVariant = Literal["modified", "inverse", "hat", "bar", "hat_modified"]
MetricName = Literal["sigma_hat", "sigma_1"]


class ParameterDomainError(ValueError):
    """Raised when parameters leave the domain where a formula is defined."""


@dataclass(frozen=True)
class ModelParams:
    """Drift and diffusion constants of a Riccati diffusion.

    ``eps`` scales the Riccati noise and ``eps_bar`` the extra noise of the
    coupled Ornstein-Uhlenbeck component.
    """

    A: float
    R: float
    S: float
    U: float = 0.0
    V: float = 0.0
    eps: float = 0.0
    eps_bar: float = 0.0

    def __post_init__(self) -> None:
        for name in ("A", "R", "S", "U", "V", "eps", "eps_bar"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterDomainError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, float(value))
        if self.R <= 0:
            raise ParameterDomainError(f"R>0 required, got R={self.R}")
        if self.S <= 0:
            raise ParameterDomainError(f"S>0 required, got S={self.S}")
        if self.U < 0 or self.V < 0:
            raise ParameterDomainError(f"U>=0 and V>=0 required, got U={self.U}, V={self.V}")
        if self.eps < 0:
            raise ParameterDomainError(f"eps>=0 required, got eps={self.eps}")
        if not 0.0 <= self.eps_bar <= 1.0:
            raise ParameterDomainError(f"eps_bar in [0,1] required, got eps_bar={self.eps_bar}")

    def with_(self, **changes: float) -> "ModelParams":
        return replace(self, **changes)

    @property
    def Ubar(self) -> float:
        return self.U / self.R

    @property
    def Vbar(self) -> float:
        return self.V / self.S

    def drift(self, x: ArrayLike) -> ArrayLike:
        return 2.0 * self.A * x + self.R - self.S * x * x

    def drift_derivative(self, x: ArrayLike) -> ArrayLike:
        return 2.0 * (self.A - self.S * x)

    def sigma1(self, x: ArrayLike) -> ArrayLike:
        """Diffusion coefficient at unit noise scale, ``sqrt(x (U + V x**2))``."""
        return np.sqrt(x * (self.U + self.V * x * x))

    def diffusion(self, x: ArrayLike) -> ArrayLike:
        return self.eps * self.sigma1(x)


@dataclass(frozen=True)
class DerivedParams:
    """Decay rate, equilibria and the dimensionless ratios of a parameter set."""

    lambda_: float
    varpi_plus: float
    varpi_minus: float
    iota: float
    jmath: float
    varpi: float
    zeta: float
    Ubar: float
    Vbar: float
    chi_minus: float
    chi_plus: float

    @property
    def gap(self) -> float:
        """Distance between the two equilibria, ``varpi_plus - varpi_minus``."""
        return self.varpi_plus - self.varpi_minus


@dataclass(frozen=True)
class KappaParams:
    kappa: float
    iota_kappa: float
    jmath_kappa: float
    zeta_kappa: float
    lambda_hat_eps: float
    lambda_hat_eps_kappa: float
    eps_kappa: float
    ell_eps_kappa: float


@dataclass(frozen=True)
class ParamFamily:
    variant: str
    derived: ModelParams
    n: float = 1.0
    eps: float = 0.0


def derive(params: ModelParams) -> DerivedParams:
    A, R, S = params.A, params.R, params.S
    root = math.sqrt(A * A + R * S)
    lam = 2.0 * root
    iota = A / root
    jmath = A / math.sqrt(R * S)
    Ubar, Vbar = params.Ubar, params.Vbar
    shift = 3.0 * A / (2.0 * S)
    spread = math.sqrt(shift * shift + 3.0 * R / S)
    return DerivedParams(
        lambda_=lam,
        varpi_plus=(A + root) / S,
        varpi_minus=(A - root) / S,
        iota=iota,
        jmath=jmath,
        varpi=2.0 / (1.0 - iota),
        zeta=(iota + 1.0) * Ubar / (jmath * jmath + 1.0),
        Ubar=Ubar,
        Vbar=Vbar,
        chi_minus=shift - spread,
        chi_plus=shift + spread,
    )


def kappa_derive(params: ModelParams, kappa: float = 1.0) -> KappaParams:
    if kappa < 0:
        raise ParameterDomainError(f"kappa>=0 required, got {kappa}")
    d = derive(params)
    eps2 = params.eps**2
    iota_k = kappa * (1.0 + d.iota)
    one_plus_j2 = 1.0 + d.jmath**2
    jmath_k = (1.0 + d.iota) ** 2 * one_plus_j2 * (1.0 + iota_k) - 1.0
    zeta_k = ((iota_k + 1.0) * d.Ubar + (jmath_k + 1.0) * d.Vbar) / one_plus_j2
    ell2 = (1.0 - 0.5 * eps2 * (1.0 + iota_k) * d.Ubar) * (1.0 - 0.5 * eps2 * (1.0 + jmath_k) * d.Vbar)
    return KappaParams(
        kappa=kappa,
        iota_kappa=iota_k,
        jmath_kappa=jmath_k,
        zeta_kappa=zeta_k,
        lambda_hat_eps=d.lambda_ * (1.0 - 0.5 * eps2 * d.zeta),
        lambda_hat_eps_kappa=d.lambda_ * (1.0 - 0.5 * eps2 * zeta_k),
        eps_kappa=math.sqrt(2.0 / zeta_k) if zeta_k > 0 else math.inf,
        ell_eps_kappa=math.sqrt(ell2) if ell2 > 0 else 0.0,
    )


def iota_one(params: ModelParams) -> float:
    """``1 + iota``, the kappa=1 member of the iota family."""
    return kappa_derive(params, 1.0).iota_kappa


# --- deterministic semigroup -------------------------------------------------


def _decay_factors(t: ArrayLike, lam: float) -> tuple[np.ndarray, np.ndarray]:
    lt = lam * np.asarray(t, dtype=float)
    q = np.where(lt > 700.0, 0.0, np.exp(-np.minimum(lt, 700.0)))
    one_minus_q = np.where(lt > 700.0, 1.0, -np.expm1(-np.minimum(lt, 700.0)))
    return q, one_minus_q


def _scalar_or_array(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


def phi(t: ArrayLike, x: ArrayLike, params: ModelParams) -> ArrayLike:
    """Riccati semigroup ``phi_t(x)``; broadcasts over ``t`` and ``x``."""
    d = derive(params)
    t_arr = np.asarray(t, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t>=0 required")
    q, one_minus_q = _decay_factors(t_arr, d.lambda_)
    gap = d.gap
    denom = gap * q + (x_arr - d.varpi_minus) * one_minus_q
    return _scalar_or_array(d.varpi_plus + (x_arr - d.varpi_plus) * gap * q / denom)


def phi_derivative(n: int, t: ArrayLike, x: ArrayLike, params: ModelParams) -> ArrayLike:
    """``n``-th derivative of ``x -> phi_t(x)``."""
    if int(n) != n or n < 1:
        raise ValueError(f"derivative order n>=1 required, got {n}")
    n = int(n)
    d = derive(params)
    q, one_minus_q = _decay_factors(t, d.lambda_)
    gap = d.gap
    denom = gap * q + (np.asarray(x, dtype=float) - d.varpi_minus) * one_minus_q
    sign = 1.0 if n % 2 == 1 else -1.0
    value = sign * math.factorial(n) * gap**2 * one_minus_q ** (n - 1) * q / denom ** (n + 1)
    return _scalar_or_array(value)


def exp_semigroup(t: ArrayLike, x: ArrayLike, params: ModelParams) -> ArrayLike:
    """Deterministic exponential semigroup ``E_t(x) = sqrt(d phi_t / dx)``."""
    return np.sqrt(phi_derivative(1, t, x, params))


def varpi_of_x(x: ArrayLike, params: ModelParams) -> ArrayLike:
    """Lower constant of ``exp(lambda t) d phi_t(x) >= varpi(x)**2``."""
    d = derive(params)
    top = np.maximum(d.varpi_plus, x)
    return 1.0 - (top - d.varpi_plus) / (top - d.varpi_minus)


def phi_star(x: ArrayLike, params: ModelParams) -> ArrayLike:
    """``sup_t phi_t(x) = max(x, varpi_plus)``."""
    return np.maximum(x, derive(params).varpi_plus)


def phi_minus_star(x: ArrayLike, params: ModelParams) -> ArrayLike:
    """Supremum over time of the inverse flow started at ``1/x``."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise ParameterDomainError("phi_minus_star needs x>0")
    inverse = family(params, "inverse").derived
    return _scalar_or_array(np.maximum(1.0 / x_arr, derive(inverse).varpi_plus))


def uniform_time_bounds(upsilon: float, params: ModelParams) -> tuple[float, float]:
    """Bounds ``phi_upsilon(0) <= phi_t(x) <= varpi_+ + gap/(e^{lambda upsilon}-1)`` for t >= upsilon."""
    d = derive(params)
    lower = phi(upsilon, 0.0, params)
    upper = d.varpi_plus + d.gap / math.expm1(d.lambda_ * upsilon)
    return float(lower), float(upper)


# --- parameter families -----------------------------------------------------


def family(
    params: ModelParams, variant: FamilyVariant, n: float = 1.0, eps: float | None = None
) -> ParamFamily:
    """Transformed parameter set of a named family.

    ``modified`` shifts ``(R, S)`` by ``(n-1) eps**2/2 (U, -V)`` (``n`` may be
    negative or fractional); ``inverse`` gives the parameters of ``1/X``;
    ``hat`` and ``bar`` are the twisted systems of the two Feynman-Kac
    identities; ``hat_modified`` applies ``modified`` to the hat system.
    """
    e = params.eps if eps is None else float(eps)
    e2 = e * e
    Ubar, Vbar = params.Ubar, params.Vbar
    if variant == "modified":
        if n >= 0 and (n - 1) * e2 * Vbar >= 2:
            raise ParameterDomainError(
                f"modified family ill-founded: (n-1) eps^2 Vbar = {(n - 1) * e2 * Vbar:.6g} must be < 2"
            )
        if n < 0 and (abs(n) + 1) * e2 * Ubar >= 2:
            raise ParameterDomainError(
                f"modified family ill-founded: (|n|+1) eps^2 Ubar = {(abs(n) + 1) * e2 * Ubar:.6g} must be < 2"
            )
        shift = (n - 1) * e2 / 2.0
        R_new = params.R + shift * params.U
        S_new = params.S - shift * params.V
        if R_new <= 0 or S_new <= 0:
            raise ParameterDomainError(
                f"modified family ill-founded at n={n}: R'={R_new:.6g}, S'={S_new:.6g} must be > 0"
            )
        return ParamFamily("modified", params.with_(R=R_new, S=S_new), n=n, eps=e)
    if variant == "inverse":
        S_new = params.R - e2 * params.U
        if S_new <= 0:
            raise ParameterDomainError(
                f"inverse family needs R > eps^2 U, got R={params.R}, eps^2 U={e2 * params.U}"
            )
        inv = ModelParams(
            A=-params.A, R=params.S + e2 * params.V, S=S_new, U=params.V, V=params.U,
            eps=params.eps, eps_bar=params.eps_bar,
        )
        return ParamFamily("inverse", inv, eps=e)
    if variant in ("hat", "hat_modified"):
        iota = derive(params).iota
        R_hat = params.R * (1.0 - e2 * (0.5 + iota) * Ubar)
        S_hat = params.S * (1.0 - e2 * (0.5 - iota) * Vbar)
        if R_hat <= 0 or S_hat <= 0:
            raise ParameterDomainError(
                f"hat family ill-founded: R_hat={R_hat:.6g}, S_hat={S_hat:.6g} must both be > 0"
            )
        hat = params.with_(R=R_hat, S=S_hat)
        if variant == "hat":
            return ParamFamily("hat", hat, eps=e)
        inner = family(hat, "modified", n=n, eps=e)
        return ParamFamily("hat_modified", inner.derived, n=n, eps=e)
    if variant == "bar":
        R_bar = params.R * (1.0 + 0.5 * e2 * Ubar)
        S_bar = params.S * (1.0 - 1.5 * e2 * Vbar)
        if S_bar <= 0:
            raise ParameterDomainError(
                f"bar family ill-founded: 3 eps^2 Vbar / 2 = {1.5 * e2 * Vbar:.6g} must be < 1"
            )
        return ParamFamily("bar", params.with_(R=R_bar, S=S_bar), eps=e)
    raise ValueError(f"unknown family variant {variant!r}")


def modified_phi(t: ArrayLike, x: ArrayLike, params: ModelParams, n: float, eps: float | None = None) -> ArrayLike:
    """Semigroup of the modified family of order ``n``."""
    return phi(t, x, family(params, "modified", n=n, eps=eps).derived)


def hat_epsilon_max(params: ModelParams) -> float:
    """Supremum of noise scales keeping both hat parameters positive."""
    iota = derive(params).iota
    limits = [math.inf]
    for coef in ((0.5 + iota) * params.Ubar, (0.5 - iota) * params.Vbar):
        if coef > 0:
            limits.append(1.0 / math.sqrt(coef))
    return min(limits)


def comparison_bound(params: ModelParams, params_bar: ModelParams, x: ArrayLike) -> ArrayLike:
    """Upper bound on ``sup_t (phi_t(x) - phi_bar_t(x))`` when ``R >= R_bar`` and ``S_bar >= S``."""
    if params_bar.R > params.R or params_bar.S < params.S:
        raise ParameterDomainError("comparison requires R >= R_bar and S_bar >= S")
    if params_bar.A != params.A:
        raise ParameterDomainError("comparison requires equal A")
    d, db = derive(params), derive(params_bar)
    star = phi_star(x, params)
    return 2.0 / (d.lambda_ + db.lambda_) * db.varpi * d.varpi * (
        (params.R - params_bar.R) + (params_bar.S - params.S) * star**2
    )


# --- potentials and decay rates ---------------------------------------------


def potential_H(params: ModelParams, x: ArrayLike) -> ArrayLike:
    """Potential of the tangent process, ``-dLambda + Lambda sigma1'/sigma1 + eps^2/2 sigma1 sigma1''``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ParameterDomainError("potential_H needs x>0")
    A, R, S, U, V, eps = params.A, params.R, params.S, params.U, params.V, params.eps
    base = U + V * x * x
    slope = U + 3.0 * V * x * x
    value = slope / base * (A + 0.5 * R / x - 0.5 * S * x) - 2.0 * (A - S * x)
    value = value + 0.25 * eps**2 * (6.0 * V * x - slope * slope / (2.0 * x * base))
    return _scalar_or_array(value)


def rate_lambda_eps(params: ModelParams) -> float:
    """Infimum of ``potential_H`` in closed form (V=0 or U=0), else a lower bound.

    The closed forms are the exact minima of ``potential_H``:
    ``V=0``: ``-A + sqrt(3 R S (1 - eps^2 Ubar / 4))``;
    ``U=0``: ``A + sqrt(3 R S (1 + 3 eps^2 Vbar / 4))``.
    """
    A, R, S = params.A, params.R, params.S
    e2 = params.eps**2
    Ubar, Vbar = params.Ubar, params.Vbar
    if params.U == 0 and params.V == 0:
        raise ParameterDomainError("rate_lambda_eps needs U>0 or V>0 (sigma1 vanishes identically)")
    if params.V == 0:
        if e2 * Ubar > 2:
            raise ParameterDomainError(f"V=0 branch needs eps^2 Ubar <= 2, got {e2 * Ubar:.6g}")
        return -A + math.sqrt(3.0 * R * S * (1.0 - 0.25 * e2 * Ubar))
    if params.U == 0:
        if e2 * Vbar > 2.0 / 3.0:
            raise ParameterDomainError(f"U=0 branch needs eps^2 Vbar <= 2/3, got {e2 * Vbar:.6g}")
        return A + math.sqrt(3.0 * R * S * (1.0 + 0.75 * e2 * Vbar))
    if e2 * Ubar > 2 or 3.0 * e2 * Vbar / (1.0 + 3.0 * e2 * params.V) > 2.0 / 3.0:
        raise ParameterDomainError("general branch needs eps^2 Ubar <= 2 and 3 eps^2 Vbar/(1+3 eps^2 V) <= 2/3")
    inner = R * S * (1.0 - 0.5 * e2 * Ubar) * (1.0 + 3.0 * e2 * Vbar * (S - 1.5))
    return -abs(A) + math.sqrt(max(inner, 0.0))


def potential_H_hat(params: ModelParams, x: ArrayLike) -> ArrayLike:
    """Potential of the hat tangent-type process."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ParameterDomainError("potential_H_hat needs x>0")
    e = params.eps
    if e > hat_epsilon_max(params):
        raise ParameterDomainError("hat family ill-founded at this eps")
    iota = derive(params).iota
    i1 = 1.0 + iota
    half = 0.5 * e * e * i1
    s_term = (1.0 + half * params.Vbar) * params.S * x
    value = 2.0 * iota * (params.A - s_term) + i1 * ((1.0 - half * params.Ubar) * params.R / x + s_term)
    return _scalar_or_array(value)


def minimize_on_log_grid(fn, center: float, lo: float = 1e-6, hi: float = 1e6, points: int = 1024) -> tuple[float, float]:
    """Minimize a smooth function of ``x>0``: log grid seeding then golden-section refinement.

    Returns ``(argmin, min)``.
    """
    log_grid = np.linspace(math.log(lo * center), math.log(hi * center), points)
    values = np.asarray(fn(np.exp(log_grid)), dtype=float)
    k = int(np.nanargmin(values))
    a = log_grid[max(k - 1, 0)]
    b = log_grid[min(k + 1, points - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = float(fn(math.exp(c))), float(fn(math.exp(d)))
    for _ in range(200):
        if b - a < 1e-13:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = float(fn(math.exp(c)))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = float(fn(math.exp(d)))
    best = 0.5 * (a + b)
    value = float(fn(math.exp(best)))
    if values[k] < value:
        return float(math.exp(log_grid[k])), float(values[k])
    return math.exp(best), value


def numeric_lambda_eps(params: ModelParams) -> float:
    """``inf_x potential_H(x)`` by numerical minimization."""
    return minimize_on_log_grid(lambda x: potential_H(params, x), derive(params).varpi_plus)[1]


# --- metrics ----------------------------------------------------------------


def metric_transform(x: ArrayLike, which: MetricName, params: ModelParams) -> ArrayLike:
    """Monotone map ``g`` with ``d(x1, x2) = |g(x1) - g(x2)|``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ParameterDomainError("weighted metrics need strictly positive arguments")
    if which == "sigma_hat":
        iota = derive(params).iota
        if abs(iota) < 1e-14:
            return _scalar_or_array(np.log(x))
        return _scalar_or_array(-(x ** (-iota)) / iota)
    if which == "sigma_1":
        U, V = params.U, params.V
        if U == 0 and V == 0:
            raise ParameterDomainError("sigma_1 metric needs U>0 or V>0")
        if V == 0:
            return _scalar_or_array(2.0 / math.sqrt(U) * np.sqrt(x))
        if U == 0:
            return _scalar_or_array(-2.0 / math.sqrt(V) / np.sqrt(x))
        # int_0^x dz / sqrt(z (U + V z^2)) with z = u^2, an incomplete elliptic integral.
        a = (U / V) ** 0.25
        angle = 2.0 * np.arctan(np.sqrt(x) / a)
        return _scalar_or_array(special.ellipkinc(angle, 0.5) / (a * math.sqrt(V)))
    raise ValueError(f"unknown metric {which!r}")


def metric_d(x1: float, x2: float, which: MetricName, params: ModelParams) -> float:
    """Weighted distance ``|int_{x1}^{x2} dz / sigma(z)|``."""
    if x1 <= 0 or x2 <= 0:
        raise ParameterDomainError("weighted metrics need strictly positive arguments")
    if which == "sigma_1" and params.U > 0 and params.V > 0:
        lo, hi = sorted((float(x1), float(x2)))
        if lo == hi:
            return 0.0
        value, _ = integrate.quad(lambda z: 1.0 / params.sigma1(z), lo, hi, epsabs=0.0, epsrel=1e-10, limit=200)
        return float(value)
    return float(abs(metric_transform(x1, which, params) - metric_transform(x2, which, params)))


# --- bound functions --------------------------------------------------------


@dataclass(frozen=True)
class BoundValues:
    v: float
    w: float
    w_bar: float
    rho: float
    detail: dict = field(default_factory=dict)


def _modified_star(x: float, params: ModelParams, n: float) -> float:
    return float(phi_star(x, family(params, "modified", n=n).derived))


def _v_bound(params: ModelParams, x: float, n: float) -> float:
    d = derive(params)
    e = params.eps
    varpi_lambda = -(d.varpi**2) / d.varpi_minus * math.sqrt(2.0 / d.lambda_)
    s3n = params.sigma1(_modified_star(x, params, 3 * n))
    s32 = params.sigma1(_modified_star(x, params, 1.5 * n))
    return varpi_lambda * (e / math.sqrt(2.0 * d.lambda_) * s3n**2 - 0.5 * n * d.varpi_minus * s32)


def rho_bound(params: ModelParams, x: ArrayLike, kappa: float = 1.0) -> ArrayLike:
    d = derive(params)
    kp = kappa_derive(params, kappa)
    order = -max(kp.iota_kappa, 1.0)
    start = float(modified_phi(1.0, 0.0, params, order))
    i1 = 1.0 + d.iota
    return (1.0 + d.varpi_plus / np.maximum(start, x)) ** i1 * math.exp(3.0 * d.lambda_)


def bound_functions(
    params: ModelParams, x: float, n: int = 1, kappa: float = 1.0, v_norms: dict[int, float] | None = None
) -> BoundValues:
    """Uniform bounds on the fluctuation fields and the Laplace prefactor.

    ``v_norms`` optionally supplies Monte Carlo values of the ``n``-norms of
    the first-order field; without it each norm is replaced by its bound, so
    every returned value is a computable upper bound.
    """
    d = derive(params)
    e = params.eps
    varpi_lambda = -(d.varpi**2) / d.varpi_minus * math.sqrt(2.0 / d.lambda_)

    def v_norm(k: float) -> float:
        if v_norms is not None and k in v_norms:
            return max(1.0, v_norms[k])
        return max(1.0, _v_bound(params, x, k))

    v = _v_bound(params, x, n)
    star = float(phi_star(x, params))
    w1 = varpi_lambda * (
        n * v_norm(n) * params.sigma1(star) + params.sigma1(_modified_star(x, params, 3 * n)) ** 2 / math.sqrt(2.0 * d.lambda_)
    )
    if params.U > 0:
        u_term = params.U * (float(phi_minus_star(x, params)) if x > 0 else math.inf)
    else:
        u_term = 0.0
    root = math.sqrt(u_term + math.sqrt(params.U * params.V) + params.V * _modified_star(x, params, n) / 2.0)
    w2 = 1.5 * n * varpi_lambda * root * (2.0 * e * v_norm(4 * n) ** 2 - v_norm(2 * n) * d.varpi_minus)
    varpi_bar_lambda = 3.0 / d.lambda_ * (d.varpi / d.varpi_minus) ** 2
    w_bar = varpi_bar_lambda * v_norm(4) ** 2 * (
        params.sigma1(star) ** 2
        + (params.U / 3.0 + 4.0 * params.V * _modified_star(x, params, 4) ** 2) * (3.0 * e - d.varpi_minus)
    )
    return BoundValues(
        v=float(v), w=float(w1 + w2), w_bar=float(w_bar), rho=float(rho_bound(params, x, kappa)),
        detail={"w1": float(w1), "w2": float(w2), "varpi_lambda": varpi_lambda},
    )
