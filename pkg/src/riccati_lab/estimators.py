"""Statistical checks of simulated Riccati diffusions against closed-form bounds.

Monte Carlo means come with standard errors from batch means (at least 32
batches unless the sample is smaller).  Every estimator is a deterministic
function of its configuration and seed.  Reports share a small tabular
protocol (``header`` plus ``rows()``) so they can be written with
`export_csv`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
from scipy import stats as sps

from . import riccati_core as rc
from . import sde_engine as se
from . import stationary
from .riccati_core import ModelParams, ParameterDomainError

MIN_BATCHES = 32
R_SQUARED_GATE = 0.9
FK_MAX_HORIZON = 2.0
FK_MAX_FLAGGED_FRACTION = 1e-3

Metric = Literal["sigma_hat", "sigma_1", "euclid"]


class EstimatorError(ValueError):
    """An estimator's precondition on the simulated data failed."""


def export_csv(report, path: str | Path) -> Path:
    """Write any report exposing ``header`` and ``rows()`` as CSV with a header row."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(report.header)
        for row in report.rows():
            writer.writerow([_cell(v) for v in row])
    return path


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def batch_mean_se(batch_means: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Grand mean and its standard error from equally weighted batch means."""
    b = np.asarray(batch_means, dtype=float)
    k = b.shape[axis]
    if k < 2:
        raise EstimatorError("at least two batches are needed for a standard error")
    return b.mean(axis=axis), b.std(axis=axis, ddof=1) / math.sqrt(k)


def _batches(values: np.ndarray, n_batches: int) -> np.ndarray:
    """Split rows into contiguous batches and return per-batch means (batch axis first)."""
    n = values.shape[0]
    k = max(2, min(n_batches, n))
    edges = (np.arange(k + 1) * n) // k
    return np.stack([values[a:b].mean(axis=0) for a, b in zip(edges[:-1], edges[1:])])


# --- moments ------------------------------------------------------------------


@dataclass(frozen=True)
class MomentReport:
    """Monte Carlo ``n``-norms ``(E X_t^n)^{1/n}`` against the modified-flow bracket."""

    n: int
    times: np.ndarray
    norms: np.ndarray
    se: np.ndarray
    lower: np.ndarray | None
    upper: np.ndarray | None
    admissible: bool
    reason: str
    slack: float
    passes: np.ndarray | None

    header = ("t", "n", "norm", "se", "lower", "upper", "pass")

    @property
    def all_pass(self) -> bool:
        return bool(self.admissible and self.passes is not None and np.all(self.passes))

    def rows(self):
        for i, t in enumerate(self.times):
            yield (
                t, self.n, self.norms[i], self.se[i],
                "" if self.lower is None else self.lower[i],
                "" if self.upper is None else self.upper[i],
                "" if self.passes is None else bool(self.passes[i]),
            )


def moment_bracket(params: ModelParams, x0: float, n: int, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper curves ``phi^{(eps,-1)}_t(x0)`` and ``phi^{(eps,n)}_t(x0)``."""
    lower = np.asarray(rc.modified_phi(times, x0, params, -1.0), dtype=float)
    upper = np.asarray(rc.modified_phi(times, x0, params, float(n)), dtype=float)
    return lower, upper


def bracket_admissible(params: ModelParams, n: int) -> tuple[bool, str]:
    """Whether both bracket families exist; the reason string explains a failure."""
    value = (n - 1) * params.eps**2 * params.Vbar
    if value >= 2:
        return False, f"(n-1) eps^2 Vbar = {value:.6g} >= 2"
    try:
        rc.family(params, "modified", n=float(n))
        rc.family(params, "modified", n=-1.0)
    except ParameterDomainError as exc:
        return False, str(exc)
    return True, ""


def mc_moments(
    ensemble: se.PowerSums | se.PathEnsemble,
    n: int,
    params: ModelParams | None = None,
    x0: float | None = None,
    slack: float = 3.0,
    n_batches: int = MIN_BATCHES,
) -> MomentReport:
    """``n``-norms per record instant with batch-means standard errors and a bracket check.

    For a `PowerSums` input the batches are the simulator's batches and
    ``params``/``x0`` are required; for a `PathEnsemble` they default to the
    ensemble's parameters and common start.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"integer n>=1 required, got {n}")
    n = int(n)
    if isinstance(ensemble, se.PowerSums):
        if params is None or x0 is None:
            raise ValueError("params and x0 are required with PowerSums input")
        if ensemble.sums.shape[2] <= n:
            raise ValueError(f"power sums only reach power {ensemble.sums.shape[2] - 1}")
        counts = ensemble.sums[:, :, 0]
        batch_moments = ensemble.sums[:, :, n] / counts
        times = ensemble.times
    else:
        params = ensemble.params if params is None else params
        if x0 is None:
            starts = ensemble.states[:, 0]
            if not np.all(starts == starts[0]):
                raise ValueError("ensemble has several start points; pass x0")
            x0 = float(starts[0])
        states = ensemble.finite_states()
        batch_moments = _batches(np.abs(states) ** n, n_batches)
        times = ensemble.times
    moment_mean, moment_se = batch_mean_se(batch_moments)
    norms = moment_mean ** (1.0 / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        se_norm = np.where(moment_mean > 0, moment_se * norms / (n * moment_mean), 0.0)
    admissible, reason = bracket_admissible(params, n)
    lower = upper = passes = None
    if admissible:
        lower, upper = moment_bracket(params, float(x0), n, times)
        tol = slack * se_norm + 1e-12 * np.maximum(1.0, np.abs(norms))
        passes = (norms >= lower - tol) & (norms <= upper + tol)
    return MomentReport(
        n=n, times=times, norms=norms, se=se_norm, lower=lower, upper=upper,
        admissible=admissible, reason=reason, slack=slack, passes=passes,
    )


def batch_moment_spread(samples: np.ndarray, orders: Sequence[int], n_batches: int = MIN_BATCHES) -> dict[int, float]:
    """Batch-to-batch coefficient of variation of absolute standardized moments.

    For each batch the statistic is ``E|X - m|^n / s^n``, with the batch's own
    mean ``m`` and standard deviation ``s``; the spread is the standard deviation
    of the batch statistics divided by their mean.
    """
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    k = max(2, min(n_batches, x.size // 2))
    edges = (np.arange(k + 1) * x.size) // k
    out = {}
    for order in orders:
        values = []
        for a, b in zip(edges[:-1], edges[1:]):
            chunk = x[a:b]
            centred = chunk - chunk.mean()
            values.append(np.mean(np.abs(centred) ** order) / chunk.std() ** order)
        values = np.asarray(values)
        out[int(order)] = float(values.std(ddof=1) / values.mean())
    return out


# --- Wasserstein distances -----------------------------------------------------


def wasserstein_1d(samples1, samples2, metric: Metric = "euclid", params: ModelParams | None = None) -> float:
    """``W_1`` between two empirical laws under ``d(x, y) = |g(x) - g(y)|`` with monotone ``g``.

    The optimal coupling in one dimension is the quantile coupling, so the
    distance is the L1 distance between the empirical quantile functions of
    the transformed samples (computed by `scipy.stats.wasserstein_distance`).
    """
    a = np.asarray(samples1, dtype=float).ravel()
    b = np.asarray(samples2, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if metric not in ("sigma_hat", "sigma_1", "euclid"):
        raise ValueError(f"unknown metric {metric!r}")
    if metric != "euclid":
        if params is None:
            raise ValueError(f"metric {metric!r} needs params")
        if np.any(a <= 0) or np.any(b <= 0):
            raise ParameterDomainError("weighted metrics need strictly positive samples")
        a = np.asarray(rc.metric_transform(a, metric, params), dtype=float)
        b = np.asarray(rc.metric_transform(b, metric, params), dtype=float)
    return float(sps.wasserstein_distance(a, b))


# --- rate fits -------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of ``log value = intercept - rate * t`` over a window."""

    window: tuple[float, float]
    rate: float
    intercept: float
    r_squared: float
    n_points: int

    header = ("t0", "t1", "rate", "intercept", "r_squared", "n_points", "flagged")

    @property
    def flagged(self) -> bool:
        return bool(self.r_squared < R_SQUARED_GATE)

    def rows(self):
        yield (self.window[0], self.window[1], self.rate, self.intercept, self.r_squared, self.n_points, self.flagged)


def default_window(times: np.ndarray) -> tuple[float, float]:
    """``[max(1, T/4), 3T/4]``: skips the transient and the noisy tail."""
    horizon = float(np.max(times))
    return max(1.0, horizon / 4.0), 0.75 * horizon


def fit_rate(times, values, window: tuple[float, float] | None = None) -> RateFit:
    """Exponential decay rate of a positive series by least squares on the log scale."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise ValueError("times and values must have the same shape")
    t0, t1 = default_window(t) if window is None else (float(window[0]), float(window[1]))
    inside = (t >= t0 - 1e-12) & (t <= t1 + 1e-12)
    if inside.sum() < 5:
        raise ValueError(f"rate fit needs >= 5 points in [{t0}, {t1}], got {int(inside.sum())}")
    if np.any(~(v[inside] > 0)):
        raise ValueError("rate fit needs strictly positive values in the window")
    x, y = t[inside], np.log(v[inside])
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(residual**2) / total if total > 0 else 1.0
    return RateFit(window=(t0, t1), rate=float(-slope), intercept=float(intercept), r_squared=float(r2),
                   n_points=int(inside.sum()))


# --- Laplace bound and Wasserstein contraction --------------------------------


@dataclass(frozen=True)
class LaplaceReport:
    """``E[E_t(x)^2]`` against ``varpi(x)^2 e^{-lambda t}`` and ``rho(x) e^{-lambda_hat t}``."""

    entries: list = field(default_factory=list)
    header = ("x", "t", "estimate", "se", "lower", "upper", "pass")

    @property
    def all_pass(self) -> bool:
        return all(e[-1] for e in self.entries)

    def rows(self):
        yield from self.entries


def laplace_bounds(
    params: ModelParams, starts: Sequence[float], check_times: Sequence[float], config: se.SimConfig,
    slack: float = 3.0, n_batches: int = MIN_BATCHES,
) -> LaplaceReport:
    """Monte Carlo second moment of the exponential semigroup with its two-sided bound."""
    d = rc.derive(params)
    lam_hat = rc.kappa_derive(params, 1.0).lambda_hat_eps_kappa
    check_times = [float(t) for t in check_times]
    horizon = max(check_times)
    stride = _common_stride(check_times, config.dt)
    cfg = config.with_(horizon=horizon, record_stride=stride)
    entries = []
    for j, x in enumerate(starts):
        run = se.path_functionals(params, float(x), cfg.with_(stream_offset=config.stream_offset + j * cfg.n_paths),
                                  se.Integrand.drift_derivative(params))
        for t in check_times:
            idx = int(np.argmin(np.abs(run.times - t)))
            squared = np.exp(run.integrals[:, idx])
            mean, err = batch_mean_se(_batches(squared, n_batches))
            lower = float(rc.varpi_of_x(float(x), params)) ** 2 * math.exp(-d.lambda_ * t)
            upper = float(rc.rho_bound(params, float(x), 1.0)) * math.exp(-lam_hat * t)
            ok = bool(lower - slack * err <= mean <= upper + slack * err)
            entries.append((float(x), t, float(mean), float(err), lower, upper, ok))
    return LaplaceReport(entries=entries)


def _common_stride(check_times: Sequence[float], dt: float) -> int:
    steps = [int(round(t / dt)) for t in check_times]
    for t, s in zip(check_times, steps):
        if abs(s * dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"check time {t} is not a multiple of dt={dt}")
    return max(1, math.gcd(*steps))


@dataclass(frozen=True)
class WassersteinDecay:
    times: np.ndarray
    distances: np.ndarray
    fit: RateFit
    metric: str

    header = ("t", "distance")

    def rows(self):
        yield from zip(self.times, self.distances)


def wasserstein_decay(
    params: ModelParams, x1: float, x2: float, config: se.SimConfig, metric: Metric = "sigma_hat",
    window: tuple[float, float] | None = None,
) -> WassersteinDecay:
    """``W_d(Law X_t(x1), Law X_t(x2))`` on the record grid from coupled ensembles, with a rate fit.

    The two ensembles share Brownian increments.  This does not change either
    law, and because the pathwise order is preserved it removes the
    sampling floor of the empirical distance.
    """
    a, b = se.simulate_coupled_pair(params, x1, x2, config)
    distances = np.array([
        wasserstein_1d(a.states[:, i], b.states[:, i], metric, params) for i in range(a.times.size)
    ])
    return WassersteinDecay(times=a.times, distances=distances, fit=fit_rate(a.times, distances, window), metric=metric)


# --- Feynman-Kac identities ------------------------------------------------------


@dataclass(frozen=True)
class FKResult:
    """One side-by-side check of a change-of-measure identity for a test function."""

    identity: str
    function: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    z: float
    n_flagged: int

    header = ("identity", "function", "lhs", "lhs_se", "rhs", "rhs_se", "z", "n_flagged")

    def rows(self):
        yield (self.identity, self.function, self.lhs, self.lhs_se, self.rhs, self.rhs_se, self.z, self.n_flagged)


def _richardson_values(run: se.PathFunctionals, weight: Callable, test: Callable, richardson: bool) -> np.ndarray:
    fine = test(run.states[:, -1]) * weight(run.states[:, -1], run.integrals[:, -1])
    if not richardson:
        return fine
    coarse = test(run.coarse_states[:, -1]) * weight(run.coarse_states[:, -1], run.coarse_integrals[:, -1])
    return 2.0 * fine - coarse


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    if values.size < 2:
        raise EstimatorError("need at least two paths")
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def _z(a: float, sa: float, b: float, sb: float) -> float:
    pooled = math.hypot(sa, sb)
    diff = a - b
    if pooled == 0.0:
        return 0.0 if abs(diff) <= 1e-9 * max(1.0, abs(a), abs(b)) else math.copysign(math.inf, diff)
    return diff / pooled


def fk_check(
    params: ModelParams,
    x: float,
    t: float,
    functions: Callable | Sequence[Callable] | dict[str, Callable],
    config: se.SimConfig,
    identity: str | Sequence[str] = "bar",
    richardson: bool = True,
) -> list[FKResult]:
    """Compare ``E[f(X_t) T_t]`` with its change-of-measure representations.

    * ``bar``: ``E[f(Xbar_t) exp int_0^t dLambda(Xbar_s) ds]`` where ``Xbar``
      is the diffusion with parameters ``R(1 + eps^2 Ubar/2)``, ``S(1 - 3 eps^2 Vbar/2)``;
    * ``hat``: ``E[f(Xhat_t) (Xhat_t/x)^{iota_1} exp(-int_0^t Hhat(Xhat_s) ds)]`` with the hat system.

    ``identity`` names one representation or several; the tangent side is
    simulated once and shared.  Each side is a separate ensemble of
    ``config.n_paths`` paths on disjoint streams, and all test functions
    reuse the same paths.  With ``richardson`` each side is extrapolated as
    ``2 Y_fine - Y_coarse``.  Results are ordered by identity, then function.
    """
    if not 0 < t <= FK_MAX_HORIZON:
        raise ValueError(f"fk_check needs 0 < t <= {FK_MAX_HORIZON} (exponential weights), got t={t}")
    if x <= 0:
        raise ValueError("x>0 required")
    identities = (identity,) if isinstance(identity, str) else tuple(identity)
    for name in identities:
        if name not in _FK_SLOTS:
            raise ValueError(f"identity must be 'bar' or 'hat', got {name!r}")
    named = _named_functions(functions)
    twisted = {name: rc.family(params, name).derived for name in identities}
    cfg = config.with_(horizon=float(t))
    cfg = cfg.with_(record_stride=cfg.n_steps)

    lhs_run = se.path_functionals(params, x, cfg, se.Integrand.tangent_potential(params), richardson)
    sigma_x = float(params.sigma1(x))

    def tangent_weight(state, integral):
        return params.sigma1(state) / sigma_x * np.exp(-integral)

    results = []
    for name in identities:
        integrand, rhs_weight = _fk_representation(params, x, name)
        rhs_run = se.path_functionals(
            twisted[name], x, cfg.with_(stream_offset=cfg.stream_offset + _FK_SLOTS[name] * cfg.n_paths),
            integrand, richardson,
        )
        n_flagged = lhs_run.n_flagged + rhs_run.n_flagged
        if n_flagged > FK_MAX_FLAGGED_FRACTION * 2 * cfg.n_paths:
            raise EstimatorError(
                f"{n_flagged} of {2 * cfg.n_paths} paths touched zero where the potential is singular"
            )
        lhs_keep, rhs_keep = ~lhs_run.flagged, ~rhs_run.flagged
        for label, test in named.items():
            lhs_vals = _richardson_values(lhs_run, tangent_weight, test, richardson)[lhs_keep]
            rhs_vals = _richardson_values(rhs_run, rhs_weight, test, richardson)[rhs_keep]
            lm, ls = _mean_and_se(lhs_vals)
            rm, rs = _mean_and_se(rhs_vals)
            results.append(FKResult(name, label, lm, ls, rm, rs, _z(lm, ls, rm, rs), n_flagged))
    return results


_FK_SLOTS = {"bar": 1, "hat": 2}


def _fk_representation(params: ModelParams, x: float, name: str) -> tuple[se.Integrand, Callable]:
    """Integrand and terminal weight of the twisted side of one identity."""
    if name == "bar":
        return se.Integrand.drift_derivative(params), lambda state, integral: np.exp(integral)
    i1 = rc.iota_one(params)
    return se.Integrand.hat_potential(params), lambda state, integral: (state / x) ** i1 * np.exp(-integral)


def _named_functions(functions) -> dict[str, Callable]:
    if callable(functions):
        return {getattr(functions, "__name__", "f"): functions}
    if isinstance(functions, dict):
        return dict(functions)
    return {getattr(f, "__name__", f"f{i}"): f for i, f in enumerate(functions)}


# --- Lyapunov exponent and Poincare decay --------------------------------------------


@dataclass(frozen=True)
class LyapunovEstimate:
    """Ensemble average of ``(1/T) int_0^T (A - S X_s) ds`` with its bracket."""

    value: float
    se: float
    lower: float | None
    upper: float | None
    horizon: float

    header = ("horizon", "value", "se", "lower", "upper")

    def rows(self):
        yield (self.horizon, self.value, self.se, "" if self.lower is None else self.lower,
               "" if self.upper is None else self.upper)


def lyapunov_bracket(params: ModelParams) -> tuple[float, float]:
    """``[A - S varpi_+, A - S lower]`` from the stationary mean bracket."""
    lower_mean, upper_mean = stationary.stationary_mean_bounds(params)
    return params.A - params.S * upper_mean, params.A - params.S * lower_mean


def lyapunov(
    params: ModelParams, x0, horizon: float, config: se.SimConfig, n_batches: int = MIN_BATCHES
) -> LyapunovEstimate:
    if horizon < 100:
        raise ValueError(f"horizon >= 100 required for a long-run average, got {horizon}")
    cfg = config.with_(horizon=float(horizon))
    cfg = cfg.with_(record_stride=cfg.n_steps)
    run = se.path_functionals(params, x0, cfg, se.Integrand.half_drift_derivative(params))
    averages = run.integrals[:, -1] / horizon
    mean, err = batch_mean_se(_batches(averages, n_batches))
    try:
        lower, upper = lyapunov_bracket(params)
    except ParameterDomainError:
        lower = upper = None
    return LyapunovEstimate(value=float(mean), se=float(err), lower=lower, upper=upper, horizon=float(horizon))


def _resolved_window(times: np.ndarray, variance: np.ndarray, err: np.ndarray) -> tuple[float, float] | None:
    """From ``t = 0`` to the last record instant before the variance sinks below 3 SE.

    A stationary start has no transient, so the window may begin before
    ``t = 1``; it ends where the nested estimator reaches its noise floor.
    """
    resolved = variance > 3.0 * err
    stop = int(np.argmin(resolved)) if not np.all(resolved) else times.size
    if stop < 5:
        return None
    return float(times[0]), float(times[stop - 1])


@dataclass(frozen=True)
class PoincareReport:
    """Nested Monte Carlo estimate of ``Var_pi(P_t f)`` with the fitted decay rate."""

    times: np.ndarray
    variance: np.ndarray
    se: np.ndarray
    fit: RateFit | None
    lambda_eps: float
    threshold: float

    header = ("t", "variance", "se")

    @property
    def passes(self) -> bool:
        return bool(self.fit is not None and self.fit.rate >= self.threshold)

    def rows(self):
        yield from zip(self.times, self.variance, self.se)


def poincare_decay(
    params: ModelParams,
    f: Callable,
    config: se.SimConfig,
    n_outer: int = 512,
    n_inner: int = 256,
    window: tuple[float, float] | None = None,
    margin: float = 0.2,
) -> PoincareReport:
    """Decay of ``Var_pi(P_t f)`` for a stationary start, by nested Monte Carlo.

    Outer draws ``X_0 ~ pi_eps`` come from `stationary.sample`; each is
    followed by ``n_inner`` conditional paths.  With inner means ``m_i`` and
    inner variances ``s_i^2``, ``var(m) - mean(s^2)/n_inner`` is unbiased for
    ``Var_pi(P_t f)``.  The standard error comes from splitting the outer
    draws into batches.  The pass threshold is ``2 lambda_eps (1 - margin)``.
    Without an explicit ``window`` the fit covers the instants where the
    variance is resolved above 3 SE; no fit is made when fewer than five are.
    """
    if params.V != 0:
        raise ParameterDomainError("poincare_decay is defined for the V=0 regime")
    lam_eps = rc.rate_lambda_eps(params)
    if lam_eps <= 0:
        raise ParameterDomainError(f"lambda_eps = {lam_eps:.6g} must be > 0")
    measure = stationary.build(params)
    outer = stationary.sample(measure, n_outer, seed=config.seed, stream=1 + config.stream_offset)
    starts = np.repeat(outer, n_inner)
    run = se.simulate_riccati(params, starts, config.with_(n_paths=starts.size))
    values = np.asarray(f(run.states), dtype=float)
    if values.shape != run.states.shape:
        values = np.broadcast_to(values, run.states.shape)
    grouped = values.reshape(n_outer, n_inner, -1)
    inner_mean = grouped.mean(axis=1)
    inner_var = grouped.var(axis=1, ddof=1)
    k = max(2, min(MIN_BATCHES, n_outer // 8))
    edges = (np.arange(k + 1) * n_outer) // k
    per_batch = np.stack([
        inner_mean[a:b].var(axis=0, ddof=1) - inner_var[a:b].mean(axis=0) / n_inner
        for a, b in zip(edges[:-1], edges[1:])
    ])
    variance = inner_mean.var(axis=0, ddof=1) - inner_var.mean(axis=0) / n_inner
    err = per_batch.std(axis=0, ddof=1) / math.sqrt(k)
    fit = None
    if window is None:
        window = _resolved_window(run.times, variance, err)
    if window is not None:
        fit = fit_rate(run.times, variance, window)
    return PoincareReport(
        times=run.times, variance=variance, se=err, fit=fit, lambda_eps=lam_eps,
        threshold=2.0 * lam_eps * (1.0 - margin),
    )
