"""Experiment catalog: each entry reproduces one figure or checks one quantitative claim.

An experiment is an `ExperimentSpec` holding typed defaults (the accepted
configuration keys), a runner and the list of artifacts it writes.  The
runner returns tables, figures and checks; `execute` writes them as CSV,
SVG and a JSON manifest.  Defaults are the acceptance-size runs; smaller
smoke runs override ``sim.*`` keys.
"""

from __future__ import annotations

import csv
import json
import math
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from . import enkf
from . import estimators as es
from . import riccati_core as rc
from . import sde_engine as se
from . import stationary
from . import svg
from .config import ConfigError, ResolvedConfig, format_value
from .riccati_core import ModelParams, ParameterDomainError
from .rng import derive_seed

# --- result types ---------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    """One acceptance predicate.  ``passed=None`` means it could not be evaluated."""

    name: str
    passed: bool | None
    detail: str
    value: float | None = None
    threshold: str | None = None

    def __post_init__(self) -> None:
        if self.passed is not None:
            object.__setattr__(self, "passed", bool(self.passed))
        if self.value is not None:
            object.__setattr__(self, "value", float(self.value))

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail,
                "value": _json_number(self.value), "threshold": self.threshold}


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[str, ...]
    rows: list
    description: str


@dataclass(frozen=True)
class Figure:
    name: str
    series: list
    options: dict = field(default_factory=dict)


@dataclass
class Outcome:
    tables: list = field(default_factory=list)
    figures: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.checks)


@dataclass(frozen=True)
class Diagnostic:
    level: str
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.message}"


@dataclass(frozen=True)
class Context:
    spec: "ExperimentSpec"
    config: ResolvedConfig
    seed: int

    def __getitem__(self, key: str) -> Any:
        return self.config[key]

    def subseed(self, label: str) -> int:
        return derive_seed(self.seed, label)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    claim: str
    defaults: Mapping[str, Any]
    runner: Callable[[Context], Outcome]
    outputs: tuple[str, ...]
    checks: tuple[str, ...]
    model_kind: str = "riccati"

    def model(self, config: ResolvedConfig):
        if self.model_kind == "filter":
            return filter_model(config)
        if self.model_kind == "riccati":
            return riccati_params(config)
        return None

    def sim(self, config: ResolvedConfig, seed: int) -> se.SimConfig:
        return sim_config(config, seed)


# --- configuration helpers ------------------------------------------------------------

RICCATI_KEYS = {"model.A": 0.0, "model.R": 1.0, "model.S": 1.0, "model.U": 1.0, "model.V": 1.0,
                "model.eps": 0.2, "model.N": 0, "model.variant": "vanilla"}
FILTER_KEYS = {"model.A": 20.0, "model.R": 1.0, "model.B": 1.0, "model.Sigma": 1.0, "model.P0": 0.0, "model.N": 6}


def riccati_params(config: ResolvedConfig, prefix: str = "model") -> ModelParams:
    """Model parameters; a positive ``N`` maps (R, S) through an ensemble filter variant."""
    m = config.section(prefix)
    n_members = int(m.get("N", 0))
    if n_members > 0:
        variant = m.get("variant", "vanilla")
        if variant not in enkf.VARIANTS:
            raise ConfigError(f"{prefix}.variant must be one of {list(enkf.VARIANTS)}, got {variant!r}")
        if m["S"] <= 0:
            raise ParameterDomainError(f"S>0 required, got S={m['S']}")
        model = enkf.FilterModel(A=m["A"], R=m["R"], B=math.sqrt(m["S"]), Sigma=1.0)
        return enkf.variant_params(model, variant, n_members)
    return ModelParams(A=m["A"], R=m["R"], S=m["S"], U=m["U"], V=m["V"], eps=m["eps"])


def filter_model(config: ResolvedConfig) -> enkf.FilterModel:
    m = config.section("model")
    return enkf.FilterModel(A=m["A"], R=m["R"], B=m["B"], Sigma=m["Sigma"], P0=m.get("P0", 0.0))


def sim_config(config: ResolvedConfig, seed: int, prefix: str = "sim") -> se.SimConfig:
    s = config.section(prefix)
    dt, horizon = s["dt"], s["horizon"]
    record_dt = s.get("record_dt", horizon)
    stride = max(1, int(round(record_dt / dt)))
    if abs(stride * dt - record_dt) > 1e-9 * max(1.0, record_dt):
        raise ConfigError(f"{prefix}.record_dt={record_dt} is not a multiple of {prefix}.dt={dt}")
    try:
        return se.SimConfig(dt=dt, horizon=horizon, scheme=s.get("scheme", "tamed_euler"), seed=seed,
                            n_paths=int(s["paths"]), record_stride=stride)
    except ValueError as exc:
        raise ConfigError(f"{prefix}: {exc}") from None


# --- shared pieces -----------------------------------------------------------------------


def _json_number(value):
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else str(value)


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def _override(config: ResolvedConfig, **values: Any) -> ResolvedConfig:
    merged = {**config.values, **{k.replace("__", "."): v for k, v in values.items()}}
    return ResolvedConfig(config.experiment, config.master_seed, merged)


def _zip_rows(*columns) -> list:
    return [tuple(row) for row in zip(*columns)]


def _quantile_curve(samples: np.ndarray, points: int = 512) -> tuple[np.ndarray, np.ndarray]:
    probs = (np.arange(points) + 0.5) / points
    return np.quantile(samples, probs), probs


# --- figure 1 ------------------------------------------------------------------------------


def _fig1(ctx: Context) -> Outcome:
    model = filter_model(ctx.config)
    n_members = ctx["model.N"]
    xs = np.linspace(ctx["plot.x_max"] / ctx["plot.points"], ctx["plot.x_max"], ctx["plot.points"])
    out = Outcome()
    series, finite, info = [], {}, {}
    orders = range(1, 10)
    for variant, color in (("vanilla", "#d62728"), ("deterministic", "#1f77b4")):
        p = enkf.variant_params(model, variant, n_members)
        measure = stationary.build(p)
        pdf, cdf = measure.pdf(xs), measure.cdf(xs)
        out.tables.append(Table(f"density_{variant}.csv", ("x", "pdf", "cdf"), _zip_rows(xs, pdf, cdf),
                                f"invariant density of the {variant} sample variance"))
        series.append(svg.Series(xs, pdf, label=f"{variant} EnKF", color=color))
        finite[variant] = [stationary.stationary_moment_finite(p, k) for k in orders]
        info[variant] = (p, measure)
        out.summary[f"{variant}_mean"] = stationary.moment(measure, 1)
        out.summary[f"{variant}_regime"] = measure.regime
    out.figures.append(Figure("fig1.svg", series, {"title": "Invariant measures of the sample variance",
                                                   "xlabel": "sample variance", "ylabel": "density"}))
    expected = [(2 * k - 4) / n_members < 1 for k in orders]
    out.checks.append(Check(
        "vanilla-moments-finite-iff-(2n-4)/N<1", finite["vanilla"] == expected,
        f"finite for n in {[k for k, f in zip(orders, finite['vanilla']) if f]}", threshold="n < (N+4)/2"))
    out.checks.append(Check("deterministic-all-moments-finite", all(finite["deterministic"]),
                            f"finite for n=1..9: {all(finite['deterministic'])}"))
    p_v, m_v = info["vanilla"]
    far = np.geomspace(1e3, 1e5, 40)
    fitted = _slope(far, np.exp(m_v.log_density(far) - m_v.log_density(far[0])))
    exponent = stationary.tail_exponent(p_v)
    out.checks.append(Check("vanilla-power-law-tail", math.isfinite(exponent) and abs(fitted - exponent) <= 0.05,
                            f"log-log slope {fitted:.4f} on [1e3, 1e5]", fitted, f"{exponent:.4f} +- 0.05"))
    p_d, m_d = info["deterministic"]
    x_far = 2.0 * rc.derive(p_d).varpi_plus
    h = 1e-2 * x_far
    curvature = float(m_d.log_density(x_far + h) - 2 * m_d.log_density(x_far) + m_d.log_density(x_far - h)) / h**2
    gaussian = -2.0 * p_d.S / (p_d.U * p_d.eps**2)
    out.checks.append(Check(
        "deterministic-gaussian-tail", m_d.regime == "U_pos_V0" and abs(curvature / gaussian - 1) <= 0.05,
        f"log-density curvature {curvature:.5g} at x={x_far:.4g}", curvature, f"{gaussian:.5g} within 5%"))
    return out


# --- figure 2 ------------------------------------------------------------------------------


def _fig2(ctx: Context) -> Outcome:
    model = filter_model(ctx.config)
    n_members = ctx["model.N"]
    base = sim_config(ctx.config, ctx.seed)
    flow = np.asarray(rc.phi(base.record_times, model.P0, model.riccati), dtype=float)
    out = Outcome()
    out.tables.append(Table("flow.csv", ("t", "phi"), _zip_rows(base.record_times, flow),
                            "deterministic Riccati flow from P0"))
    out.figures.append(Figure("fig2_flow.svg", [svg.Series(base.record_times, flow, label="Riccati flow")],
                              {"title": "Deterministic Riccati flow", "xlabel": "t", "ylabel": "P"}))
    spread = {}
    late = base.record_times >= 0.5 * base.horizon
    for variant, color in (("vanilla", "#d62728"), ("deterministic", "#1f77b4")):
        run = enkf.run_enkf(model, variant, n_members, base.with_(seed=ctx.subseed(variant)))
        paths = run.sample_var
        names = tuple(f"path_{i:03d}" for i in range(paths.shape[0]))
        out.tables.append(Table(f"paths_{variant}.csv", ("t",) + names,
                                [tuple([t, *paths[:, j]]) for j, t in enumerate(run.times)],
                                f"sample variance paths of the {variant} EnKF, one column per repetition"))
        series = [svg.Series(run.times, paths[i], color=color, width=0.6, opacity=0.35) for i in range(paths.shape[0])]
        series.append(svg.Series(run.times, flow, label="Riccati flow", color="black", width=1.8, dashed=True))
        series.insert(0, svg.Series(run.times[:1], paths[0, :1], label=f"{variant} EnKF", color=color))
        out.figures.append(Figure(f"fig2_{variant}.svg", series, {
            "title": f"{paths.shape[0]} sample variance paths, {variant} EnKF", "xlabel": "t", "ylabel": "P"}))
        spread[variant] = float(paths[:, late].std(axis=0, ddof=1).mean())
        out.checks.append(Check(f"{variant}-sample-variance-nonnegative", bool(np.all(paths >= 0)),
                                f"min {paths.min():.4g}"))
    ratio = spread["deterministic"] / spread["vanilla"]
    out.summary.update({f"{k}_late_spread": v for k, v in spread.items()})
    out.checks.append(Check("deterministic-fluctuations-reduced", ratio <= ctx["check.spread_ratio"],
                            f"late cross-path spread ratio deterministic/vanilla = {ratio:.4g}", ratio,
                            f"<= {ctx['check.spread_ratio']}"))
    target = rc.derive(model.riccati).varpi_plus
    gap = abs(flow[-1] - target)
    out.checks.append(Check("flow-reaches-equilibrium", gap <= 1e-6 * target,
                            f"|phi_T - varpi_+| = {gap:.3g}", gap, "<= 1e-6 varpi_+"))
    return out


# --- figure 3 ------------------------------------------------------------------------------


def _abs_standardized(states: np.ndarray, orders: Sequence[int]) -> dict[int, np.ndarray]:
    centred = states - states.mean(axis=0)
    scale = states.std(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return {n: np.where(scale > 0, np.mean(np.abs(centred) ** n, axis=0) / scale**n, np.nan) for n in orders}


def _fig3(ctx: Context) -> Outcome:
    model = filter_model(ctx.config)
    n_members = ctx["model.N"]
    orders = list(range(3, ctx["check.max_order"] + 1))
    limit = ctx["check.spread_limit"]
    unstable_from = ctx["check.unstable_from"]
    target = rc.derive(model.riccati).varpi_plus
    out = Outcome()
    spread_rows, filter_rows = [], []
    spreads, zscores = {}, {}
    for variant in ("vanilla", "deterministic"):
        p = enkf.variant_params(model, variant, n_members)
        cfg = sim_config(ctx.config, ctx.subseed(f"reduced-{variant}"))
        ens = se.simulate_riccati(p, model.P0, cfg)
        states = ens.finite_states()
        std = _abs_standardized(states, orders)
        cols = ("t", "mean", "variance") + tuple(f"abs_std_moment_{n}" for n in orders)
        out.tables.append(Table(
            f"moments_{variant}.csv", cols,
            _zip_rows(ens.times, states.mean(axis=0), states.var(axis=0), *[std[n] for n in orders]),
            f"mean, variance and absolute standardized central moments of the {variant} sample variance"))
        out.figures.append(Figure(f"fig3_{variant}.svg", [
            svg.Series(ens.times, std[n], label=f"n={n}") for n in orders
        ], {"title": f"Standardized moment flows, {variant} EnKF", "xlabel": "t",
            "ylabel": "E|P-m|^n / s^n", "logy": True}))
        out.figures.append(Figure(f"fig3_{variant}_central.svg", [
            svg.Series(ens.times, states.mean(axis=0), label="mean"),
            svg.Series(ens.times, states.var(axis=0), label="variance"),
        ], {"title": f"Mean and variance flows, {variant} EnKF", "xlabel": "t", "logy": True}))
        spreads[variant] = es.batch_moment_spread(states[:, -1], orders, ctx["check.batches"])
        spread_rows.extend((variant, n, spreads[variant][n]) for n in orders)
        fcfg = se.SimConfig(dt=ctx["filter.dt"], horizon=ctx["sim.horizon"], n_paths=ctx["filter.repetitions"],
                            seed=ctx.subseed(f"filter-{variant}"))
        fcfg = fcfg.with_(record_stride=fcfg.n_steps)
        run = enkf.run_enkf(model, variant, n_members, fcfg)
        final = run.sample_var[:, -1]
        mean, err = es.batch_mean_se(es._batches(final, ctx["check.batches"]))
        zscores[variant] = (float(mean) - target) / float(err)
        filter_rows.append((variant, final.size, float(mean), float(err), target, zscores[variant]))
    out.tables.append(Table("spread.csv", ("variant", "n", "batch_spread"), spread_rows,
                            "batch-to-batch coefficient of variation of the standardized moments at the horizon"))
    out.tables.append(Table("filter_mean.csv", ("variant", "repetitions", "mean", "se", "varpi_plus", "z"),
                            filter_rows, "EnKF sample variance mean at the horizon against the Kalman-Bucy limit"))
    z_v, z_d = zscores["vanilla"], zscores["deterministic"]
    out.checks.append(Check("vanilla-mean-negatively-biased", z_v < -3, f"z = {z_v:.2f}", z_v, "< -3"))
    out.checks.append(Check("deterministic-mean-accurate", abs(z_d) <= 3, f"z = {z_d:.2f}", z_d, "|z| <= 3"))
    high = {n: s for n, s in spreads["vanilla"].items() if n >= unstable_from}
    out.checks.append(Check(f"vanilla-moments-destabilize-n>={unstable_from}", min(high.values()) > limit,
                            "spreads " + ", ".join(f"{n}:{_fmt(s)}" for n, s in high.items()),
                            min(high.values()), f"> {limit}"))
    det = spreads["deterministic"]
    out.checks.append(Check(f"deterministic-moments-stable-n<={max(orders)}", max(det.values()) <= limit,
                            "spreads " + ", ".join(f"{n}:{_fmt(s)}" for n, s in det.items()),
                            max(det.values()), f"<= {limit}"))
    return out


# --- moment bracket ---------------------------------------------------------------------------


def _moment_bracket(ctx: Context) -> Outcome:
    p = riccati_params(ctx.config)
    x0 = ctx["start.x0"]
    orders = [int(n) for n in ctx["check.orders"]]
    cfg = sim_config(ctx.config, ctx.seed)
    sums = se.power_sums(p, x0, cfg, max(orders))
    out = Outcome()
    rows, series = [], []
    for i, n in enumerate(orders):
        report = es.mc_moments(sums, n, p, x0, slack=ctx["check.slack"])
        rows.extend(report.rows())
        color = svg.PALETTE[i % len(svg.PALETTE)]
        series.append(svg.Series(report.times, report.norms, label=f"n={n} Monte Carlo", color=color))
        if not report.admissible:
            out.checks.append(Check(f"bracket-n{n}", None, f"bracket unavailable: {report.reason}"))
            continue
        series.append(svg.Series(report.times, report.lower, color=color, dashed=True, width=1.0))
        series.append(svg.Series(report.times, report.upper, color=color, dashed=True, width=1.0))
        worst = int(np.sum(~report.passes))
        out.checks.append(Check(f"bracket-n{n}", report.all_pass,
                                f"{report.times.size - worst}/{report.times.size} instants inside",
                                threshold=f"[lower - {report.slack} SE, upper + {report.slack} SE]"))
    out.tables.append(Table("moments.csv", es.MomentReport.header, rows,
                            "n-norms with batch-means SE and the modified-flow bracket"))
    out.figures.append(Figure("moment_bracket.svg", series, {
        "title": "n-norms and modified-flow brackets", "xlabel": "t", "ylabel": "n-norm"}))
    out.summary["n_blown"] = sums.n_blown
    return out


# --- fluctuation and bias scaling -------------------------------------------------------------


def _fluctuation_runs(ctx: Context):
    p = riccati_params(ctx.config)
    x0 = ctx["start.x0"]
    scales = [float(e) for e in ctx["scales.eps"]]
    paths = [int(n) for n in ctx["scales.paths"]]
    if len(paths) != len(scales):
        raise ConfigError("scales.paths must have one entry per scales.eps value")
    base = sim_config(ctx.config, ctx.seed)
    base = base.with_(record_stride=base.n_steps)
    for eps, n in zip(scales, paths):
        cfg = base.with_(n_paths=n, seed=ctx.subseed(f"eps={eps!r}"))
        yield eps, n, se.fluctuation_sums(p.with_(eps=eps), x0, cfg, reference="scheme")


def _fluctuation_scaling(ctx: Context) -> Outcome:
    rows, eps_list, norms = [], [], []
    for eps, n, fs in _fluctuation_runs(ctx):
        per_batch = fs.sums[:, -1, 1] / _batch_counts(n, fs.sums.shape[0])
        second, err = es.batch_mean_se(per_batch)
        norm = math.sqrt(second)
        rows.append((eps, n, norm, err / (2 * norm)))
        eps_list.append(eps)
        norms.append(norm)
    slope = _slope(eps_list, norms)
    target, tol = ctx["check.slope"], ctx["check.tolerance"]
    out = Outcome()
    out.tables.append(Table("residuals.csv", ("eps", "paths", "l2_residual", "se"), rows,
                            "2-norm of X_eps - phi - eps V at the horizon"))
    ref = [norms[0] * (e / eps_list[0]) ** target for e in eps_list]
    out.figures.append(Figure("fluctuation_scaling.svg", [
        svg.Series(eps_list, norms, label="|||X - phi - eps V|||_2"),
        svg.Series(eps_list, ref, label=f"slope {target:g}", dashed=True, color="black"),
    ], {"title": "Second-order fluctuation residual", "xlabel": "eps", "logx": True, "logy": True}))
    out.checks.append(Check("residual-slope", abs(slope - target) <= tol, f"log-log slope {slope:.3f}", slope,
                            f"{target:g} +- {tol:g}"))
    return out


def _batch_counts(n_paths: int, n_batches: int) -> np.ndarray:
    edges = (np.arange(n_batches + 1) * n_paths) // n_batches
    return np.diff(edges).astype(float)


def _bias_scaling(ctx: Context) -> Outcome:
    rows, eps_list, biases = [], [], []
    for eps, n, fs in _fluctuation_runs(ctx):
        counts = _batch_counts(n, fs.sums.shape[0])
        per_batch = fs.sums[:, -1, 0] / counts
        mean_r, err = es.batch_mean_se(per_batch)
        bias = float(mean_r) - eps**2 * float(fs.W_limit[-1])
        rows.append((eps, n, bias, float(err), bias / float(err)))
        eps_list.append(eps)
        biases.append(abs(bias))
    slope = _slope(eps_list, biases)
    target, tol = ctx["check.slope"], ctx["check.tolerance"]
    out = Outcome()
    # The slope alone cannot tell a resolved bias from noise, whose SE also shrinks with eps.
    out.summary["eps_with_bias_beyond_3se"] = tuple(row[0] for row in rows if abs(row[4]) > 3)
    out.tables.append(Table("bias.csv", ("eps", "paths", "bias", "se", "z"), rows,
                            "E X_eps - phi - eps^2 W at the horizon with its batch-means SE"))
    ref = [biases[0] * (e / eps_list[0]) ** target for e in eps_list]
    out.figures.append(Figure("bias_scaling.svg", [
        svg.Series(eps_list, biases, label="|E X - phi - eps^2 W|"),
        svg.Series(eps_list, ref, label=f"slope {target:g}", dashed=True, color="black"),
    ], {"title": "Bias beyond second order", "xlabel": "eps", "logx": True, "logy": True}))
    out.checks.append(Check("bias-slope", abs(slope - target) <= tol, f"log-log slope {slope:.3f}", slope,
                            f"{target:g} +- {tol:g}"))
    return out


# --- Laplace bound ----------------------------------------------------------------------------


def _laplace_bound(ctx: Context) -> Outcome:
    p = riccati_params(ctx.config)
    starts = [float(x) for x in ctx["check.starts"]]
    times = [float(t) for t in ctx["check.times"]]
    cfg = sim_config(_override(ctx.config, sim__horizon=max(times)), ctx.seed)
    report = es.laplace_bounds(p, starts, times, cfg, slack=ctx["check.slack"])
    out = Outcome()
    out.tables.append(Table("laplace.csv", es.LaplaceReport.header, list(report.rows()),
                            "Monte Carlo E[E_t(x)^2] with its lower and upper exponential bounds"))
    series = []
    for i, x in enumerate(starts):
        entries = [e for e in report.entries if e[0] == x]
        color = svg.PALETTE[i % len(svg.PALETTE)]
        ts = [e[1] for e in entries]
        series.append(svg.Series(ts, [e[2] for e in entries], label=f"x={x:g}", color=color))
        series.append(svg.Series(ts, [e[4] for e in entries], color=color, dashed=True, width=1.0))
        series.append(svg.Series(ts, [e[5] for e in entries], color=color, dashed=True, width=1.0))
    out.figures.append(Figure("laplace_bound.svg", series, {
        "title": "Second moment of the exponential semigroup", "xlabel": "t", "logy": True}))
    for x, t, mean, err, lower, upper, ok in report.entries:
        out.checks.append(Check(f"bound-x{x:g}-t{t:g}", ok, f"{lower:.4g} <= {mean:.4g} (SE {err:.2g}) <= {upper:.4g}",
                                mean, "3 SE slack"))
    return out


# --- Wasserstein contraction --------------------------------------------------------------------


def _wasserstein(ctx: Context) -> Outcome:
    p = riccati_params(ctx.config)
    cfg = sim_config(ctx.config, ctx.seed)
    window = tuple(float(v) for v in ctx["check.window"])
    decay = es.wasserstein_decay(p, ctx["start.x1"], ctx["start.x2"], cfg, ctx["check.metric"], window)
    lam = rc.derive(p).lambda_
    threshold = rc.kappa_derive(p, 1.0).lambda_hat_eps - ctx["check.margin"] * lam
    out = Outcome()
    out.tables.append(Table("distances.csv", ("t", "distance"), list(decay.rows()),
                            f"W_1 distance under the {decay.metric} metric between the two laws"))
    out.tables.append(Table("rate_fit.csv", es.RateFit.header, list(decay.fit.rows()), "exponential fit"))
    fitted = np.exp(decay.fit.intercept - decay.fit.rate * decay.times)
    out.figures.append(Figure("wasserstein.svg", [
        svg.Series(decay.times, decay.distances, label="W_1"),
        svg.Series(decay.times, fitted, label=f"fit rate {decay.fit.rate:.3f}", dashed=True, color="black"),
    ], {"title": "Wasserstein contraction", "xlabel": "t", "logy": True}))
    out.checks.append(Check("contraction-rate", decay.fit.rate >= threshold,
                            f"fitted rate {decay.fit.rate:.4f} on {window}, R^2 {decay.fit.r_squared:.4f}",
                            decay.fit.rate, f">= {threshold:.4f}"))
    return out


# --- EnKF against the reduced diffusion ------------------------------------------------------------


def _enkf_vs_reduced(ctx: Context) -> Outcome:
    model = filter_model(ctx.config)
    n_members = ctx["model.N"]
    variant = ctx["model.variant"]
    cfg = sim_config(ctx.config, ctx.seed)
    cfg = cfg.with_(record_stride=cfg.n_steps)
    run = enkf.run_enkf(model, variant, n_members, cfg.with_(seed=ctx.subseed("particle")))
    particle_all = run.sample_var[:, -1]
    particle = particle_all[np.isfinite(particle_all)]
    p = enkf.variant_params(model, variant, n_members)
    reduced_run = se.simulate_riccati(p, model.P0, cfg.with_(seed=ctx.subseed("reduced"), scheme=ctx["reduced.scheme"]))
    reduced = reduced_run.finite_states()[:, -1]
    out = Outcome()
    rows = []
    batches = ctx["check.batches"]
    for k in ctx["check.moments"]:
        a, sa = es.batch_mean_se(es._batches(particle**k, batches))
        b, sb = es.batch_mean_se(es._batches(reduced**k, batches))
        z = (float(a) - float(b)) / math.hypot(float(sa), float(sb))
        rows.append((k, float(a), float(sa), float(b), float(sb), z))
        out.checks.append(Check(f"moment-{k}-agrees", abs(z) <= ctx["check.z_limit"],
                                f"particle {float(a):.6g} vs reduced {float(b):.6g}, z = {z:.2f}", z,
                                f"|z| <= {ctx['check.z_limit']:g}"))
    diverged = particle_all.size - particle.size
    out.checks.append(Check("particle-runs-finite", diverged == 0, f"{diverged} diverged repetitions"))
    out.checks.append(Check("reduced-no-blowups", reduced_run.n_blown == 0, f"{reduced_run.n_blown} blown paths"))
    out.tables.append(Table("moments.csv", ("k", "particle", "particle_se", "reduced", "reduced_se", "z"), rows,
                            "raw moments of the sample variance at the horizon"))
    qa, probs = _quantile_curve(particle)
    qb, _ = _quantile_curve(reduced)
    out.tables.append(Table("quantiles.csv", ("probability", "particle", "reduced"), _zip_rows(probs, qa, qb),
                            "empirical quantiles of the sample variance at the horizon"))
    out.figures.append(Figure("enkf_vs_reduced.svg", [
        svg.Series(qa, probs, label="particle system"),
        svg.Series(qb, probs, label="reduced diffusion", dashed=True),
    ], {"title": "Sample variance law at the horizon", "xlabel": "P", "ylabel": "CDF"}))
    return out


# --- Feynman-Kac identities -------------------------------------------------------------------------

FK_FUNCTIONS = {"one": lambda x: np.ones_like(x), "exp_neg": lambda x: np.exp(-x)}


def _fk_identities(ctx: Context) -> Outcome:
    p = riccati_params(ctx.config)
    base = sim_config(_override(ctx.config, sim__horizon=ctx["check.t"]), ctx.seed)
    identities = tuple(ctx["check.identities"])
    z_limit = ctx["check.z_limit"]
    rows = []
    exceed: dict[tuple[str, str], int] = {}
    zs: dict[tuple[str, str], list] = {}
    for i in range(ctx["check.seeds"]):
        results = es.fk_check(p, ctx["start.x"], ctx["check.t"], FK_FUNCTIONS,
                              base.with_(seed=ctx.subseed(f"seed-{i}")), identities)
        for r in results:
            rows.append((i, *next(iter(r.rows()))))
            key = (r.identity, r.function)
            zs.setdefault(key, []).append(r.z)
            exceed[key] = exceed.get(key, 0) + int(abs(r.z) > z_limit)
    out = Outcome()
    out.tables.append(Table("fk.csv", ("seed",) + es.FKResult.header, rows,
                            "both sides of each identity per independent seed"))
    n = ctx["check.seeds"]
    idx = np.arange(n)
    series = [svg.Series(idx, zs[key], label=f"{key[0]}, f={key[1]}") for key in zs]
    series += [svg.Series([0, n - 1], [v, v], color="black", dashed=True, width=1.0) for v in (-z_limit, z_limit)]
    out.figures.append(Figure("fk_z_scores.svg", series, {"title": "Identity z-scores by seed", "xlabel": "seed",
                                                          "ylabel": "z"}))
    for key, count in exceed.items():
        out.checks.append(Check(f"{key[0]}-identity-f={key[1]}", count <= ctx["check.max_exceed"],
                                f"{count} of {n} seeds with |z| > {z_limit:g}", count,
                                f"<= {ctx['check.max_exceed']}"))
    return out


# --- Lyapunov bracket ------------------------------------------------------------------------------------


def _lyapunov(ctx: Context) -> Outcome:
    cfg = sim_config(ctx.config, ctx.seed)
    rows = []
    out = Outcome()
    for variant in ("deterministic", "vanilla"):
        p = riccati_params(_override(ctx.config, model__variant=variant))
        est = es.lyapunov(p, ctx["start.x0"], cfg.horizon, cfg.with_(seed=ctx.subseed(variant)))
        rows.append((variant, est.value, est.se, est.lower, est.upper))
        slack = ctx["check.slack"] * est.se
        if variant == "deterministic":
            ok = est.lower - slack <= est.value <= est.upper + slack
            out.checks.append(Check("v0-mapping-in-bracket", ok, f"{est.value:.5f} (SE {est.se:.2g})", est.value,
                                    f"[{est.lower:.5f}, {est.upper:.5f}] +- {ctx['check.slack']:g} SE"))
        else:
            out.checks.append(Check("vanilla-mapping-below-bound", est.value <= est.upper + slack,
                                    f"{est.value:.5f} (SE {est.se:.2g})", est.value,
                                    f"<= {est.upper:.5f} + {ctx['check.slack']:g} SE"))
    out.tables.append(Table("lyapunov.csv", ("mapping", "value", "se", "lower", "upper"), rows,
                            "long-run average of A - S X against the stationary-mean bracket"))
    return out


# --- Poincare decay ----------------------------------------------------------------------------------

POINCARE_FUNCTIONS = {"x": lambda x: x, "constant": lambda x: np.ones_like(x), "exp_neg": lambda x: np.exp(-x)}


def _poincare(ctx: Context) -> Outcome:
    p = riccati_params(ctx.config)
    name = ctx["check.function"]
    if name not in POINCARE_FUNCTIONS:
        raise ConfigError(f"check.function must be one of {sorted(POINCARE_FUNCTIONS)}, got {name!r}")
    cfg = sim_config(ctx.config, ctx.seed)
    report = es.poincare_decay(p, POINCARE_FUNCTIONS[name], cfg, ctx["check.outer"], ctx["check.inner"],
                               margin=ctx["check.margin"])
    out = Outcome()
    out.tables.append(Table("variance.csv", es.PoincareReport.header, list(report.rows()),
                            "nested Monte Carlo Var_pi(P_t f) with batch SE"))
    series = [svg.Series(report.times, report.variance, label="Var(P_t f)")]
    if report.fit is not None:
        out.tables.append(Table("rate_fit.csv", es.RateFit.header, list(report.fit.rows()), "exponential fit"))
        series.append(svg.Series(report.times, np.exp(report.fit.intercept - report.fit.rate * report.times),
                                 label=f"fit rate {report.fit.rate:.3f}", dashed=True, color="black"))
    out.figures.append(Figure("poincare.svg", series, {"title": "Variance decay from stationarity", "xlabel": "t",
                                                       "logy": True}))
    rate = report.fit.rate if report.fit else None
    out.checks.append(Check("variance-decay-rate", report.passes,
                            f"fitted rate {rate:.4f}" if rate is not None else "variance not resolved",
                            rate, f">= {report.threshold:.4f} (lambda_eps = {report.lambda_eps:.4f})"))
    return out



# --- Euler blow-up ------------------------------------------------------------------------------------


def _blowup(ctx: Context) -> Outcome:
    p = riccati_params(ctx.config)
    cfg = sim_config(ctx.config, ctx.seed)
    out = Outcome()
    rows, curves = [], {}
    for scheme in ("raw_euler", "tamed_euler"):
        ens = se.simulate_riccati(p, ctx["start.x0"], cfg.with_(scheme=scheme))
        first = float(np.min(ens.blowup_time[ens.blown_up])) if ens.n_blown else float("nan")
        rows.append((scheme, ens.n_paths, ens.n_blown, ens.n_blown / ens.n_paths, first))
        times = np.where(ens.blown_up, ens.blowup_time, np.inf)
        curves[scheme] = np.array([(times <= t).mean() for t in ens.times])
        axis = ens.times
    out.tables.append(Table("blowups.csv", ("scheme", "paths", "blown", "fraction", "first_blowup_time"), rows,
                            "paths exceeding the blow-up threshold or leaving the real line"))
    out.tables.append(Table("fraction_blown.csv", ("t", "raw_euler", "tamed_euler"),
                            _zip_rows(axis, curves["raw_euler"], curves["tamed_euler"]),
                            "cumulative fraction of blown paths"))
    out.figures.append(Figure("blowup.svg", [svg.Series(axis, curves[s], label=s) for s in curves],
                              {"title": "Cumulative blow-up fraction", "xlabel": "t", "ylabel": "fraction"}))
    raw, tamed = rows[0][2], rows[1][2]
    out.checks.append(Check("raw-euler-blows-up", raw > 0, f"{raw} of {cfg.n_paths} paths", raw, "> 0"))
    out.checks.append(Check("tamed-euler-stays-finite", tamed == 0, f"{tamed} of {cfg.n_paths} paths", tamed, "== 0"))
    return out


# --- invariant measures: Gamma mean, stationarity, tail --------------------------------------------------


def _stationarity(ctx: Context) -> Outcome:
    out = Outcome()
    g = ctx.config.section("gamma")
    gamma = stationary.Coefficients(A=g["A"], R=g["R"], S=0.0, U=g["U"], V=0.0, eps=g["eps"])
    g_mean = stationary.moment(stationary.build(gamma), 1)
    g_target = g["R"] / (2 * abs(g["A"]))
    out.checks.append(Check("gamma-mean", abs(g_mean - g_target) <= 1e-6, f"quadrature mean {g_mean:.10f}",
                            g_mean, f"{g_target:g} +- 1e-6"))

    p = riccati_params(ctx.config)
    measure = stationary.build(p)
    n_paths = ctx["sim.paths"]
    starts = stationary.sample(measure, n_paths, seed=ctx.subseed("stationary-start"))
    cfg = sim_config(ctx.config, ctx.subseed("stationary-paths"))
    check_times = [float(t) for t in ctx["check.times"]]
    sums = se.power_sums(p, starts, cfg, 2)
    rows = []
    for k in (1, 2):
        per_batch = sums.sums[:, :, k] / sums.sums[:, :, 0]
        for t in check_times:
            idx = int(np.argmin(np.abs(sums.times - t)))
            if abs(sums.times[idx] - t) > 1e-9:
                raise ConfigError(f"check time {t} is not on the record grid")
            mean, err = es.batch_mean_se(per_batch[:, idx])
            diff, diff_se = es.batch_mean_se(per_batch[:, idx] - per_batch[:, 0])
            ok = idx == 0 or abs(float(diff)) <= 3 * float(diff_se)
            rows.append((k, t, float(mean), float(err), float(diff), float(diff_se), ok))
            if idx:
                out.checks.append(Check(f"moment-{k}-constant-t{t:g}", ok,
                                        f"change {float(diff):.4g} (SE {float(diff_se):.2g})", float(diff), "3 SE"))
    out.tables.append(Table("stationary_moments.csv", ("k", "t", "moment", "se", "change", "change_se", "pass"), rows,
                            "moments along paths started from the invariant law"))

    tail_p = riccati_params(ctx.config, "tail")
    tail_measure = stationary.build(tail_p)
    xs = np.geomspace(ctx["tail.x_min"], ctx["tail.x_max"], 50)
    logd = tail_measure.log_density(xs)
    fitted = float(np.polyfit(np.log(xs), logd, 1)[0])
    out.tables.append(Table("tail.csv", ("x", "log_density"), _zip_rows(xs, logd),
                            "log invariant density on the far tail"))
    out.figures.append(Figure("tail.svg", [svg.Series(xs, np.exp(logd), label="invariant density")],
                              {"title": "Invariant density tail", "xlabel": "x", "logx": True, "logy": True}))
    stated = -(2 + (2 / tail_p.eps**2) * (tail_p.R / tail_p.U + tail_p.S / tail_p.V))
    derived = stationary.tail_exponent(tail_p)
    out.summary.update({"tail_fitted": fitted, "tail_stated_formula": stated, "tail_closed_form": derived})
    out.checks.append(Check("tail-exponent-stated-formula", abs(fitted - stated) <= 0.1,
                            f"fitted {fitted:.4f}", fitted, f"{stated:.4f} +- 0.1"))
    out.checks.append(Check("tail-exponent-closed-form", abs(fitted - derived) <= 0.1,
                            f"fitted {fitted:.4f}", fitted, f"{derived:.4f} +- 0.1"))
    return out


# --- catalog ------------------------------------------------------------------------------------------------

_FIG_FILTER = dict(FILTER_KEYS)
_SIM = {"sim.dt": 1e-3, "sim.horizon": 5.0, "sim.paths": 100_000, "sim.scheme": "tamed_euler", "sim.record_dt": 0.25}

CATALOG: dict[str, ExperimentSpec] = {}


def _register(spec: ExperimentSpec) -> None:
    CATALOG[spec.name] = spec


_register(ExperimentSpec(
    "fig1-invariant-measures",
    "Invariant laws of the vanilla and deterministic EnKF sample variance: heavy power-law tail with moments "
    "only below (N+4)/2, against a Gaussian-type tail with all moments",
    {**_FIG_FILTER, "plot.x_max": 100.0, "plot.points": 1000},
    _fig1, ("density_vanilla.csv", "density_deterministic.csv", "fig1.svg"),
    ("vanilla-moments-finite-iff-(2n-4)/N<1", "deterministic-all-moments-finite", "vanilla-power-law-tail",
     "deterministic-gaussian-tail"),
    model_kind="filter",
))
_register(ExperimentSpec(
    "fig2-sample-paths",
    "Deterministic Riccati flow and 100 EnKF sample variance paths per variant; "
    "the deterministic variant fluctuates far less",
    {**_FIG_FILTER, "sim.dt": 1e-4, "sim.horizon": 1.0, "sim.paths": 100, "sim.record_dt": 1e-3,
     "check.spread_ratio": 0.5},
    _fig2, ("flow.csv", "paths_vanilla.csv", "paths_deterministic.csv", "fig2_flow.svg", "fig2_vanilla.svg",
            "fig2_deterministic.svg"),
    ("vanilla-sample-variance-nonnegative", "deterministic-sample-variance-nonnegative",
     "deterministic-fluctuations-reduced", "flow-reaches-equilibrium"),
    model_kind="filter",
))
_register(ExperimentSpec(
    "fig3-moment-flows",
    "Moment flows of the EnKF sample variance: vanilla mean negatively biased and higher standardized "
    "moments unstable, deterministic variant accurate and stable",
    {**_FIG_FILTER, "sim.dt": 1e-4, "sim.horizon": 3.0, "sim.paths": 131_072, "sim.record_dt": 0.05,
     "sim.scheme": "tamed_euler", "filter.dt": 1e-4, "filter.repetitions": 10_000, "check.max_order": 9,
     "check.batches": 32, "check.spread_limit": 0.5, "check.unstable_from": 6},
    _fig3, ("moments_vanilla.csv", "moments_deterministic.csv", "spread.csv", "filter_mean.csv", "fig3_vanilla.svg",
            "fig3_deterministic.svg", "fig3_vanilla_central.svg", "fig3_deterministic_central.svg"),
    ("vanilla-mean-negatively-biased", "deterministic-mean-accurate", "vanilla-moments-destabilize-n>=6",
     "deterministic-moments-stable-n<=9"),
    model_kind="filter",
))
_register(ExperimentSpec(
    "moment-bracket",
    "n-norms of the diffusion lie between the modified flows of orders -1 and n",
    {**RICCATI_KEYS, "model.V": 0.0, **_SIM, "start.x0": 0.0, "check.orders": (1, 2, 3), "check.slack": 3.0},
    _moment_bracket, ("moments.csv", "moment_bracket.svg"), ("bracket-n<order>",),
))
_FLUCT = {**RICCATI_KEYS, "start.x0": 1.0, "sim.dt": 1e-4, "sim.horizon": 2.0, "sim.paths": 1,
          "sim.scheme": "tamed_euler", "scales.eps": (0.4, 0.2, 0.1, 0.05)}
_register(ExperimentSpec(
    "fluctuation-scaling",
    "The residual X_eps - phi - eps V of the first-order fluctuation expansion is O(eps^2) in 2-norm",
    {**_FLUCT, "scales.paths": (20_000, 20_000, 20_000, 20_000), "check.slope": 2.0, "check.tolerance": 0.3},
    _fluctuation_scaling, ("residuals.csv", "fluctuation_scaling.svg"), ("residual-slope",),
))
_register(ExperimentSpec(
    "bias-scaling",
    "The bias E X_eps - phi - eps^2 W beyond the second-order term scales like eps^3",
    {**_FLUCT, "scales.paths": (250_000, 250_000, 250_000, 1_000_000), "check.slope": 3.0, "check.tolerance": 0.5},
    _bias_scaling, ("bias.csv", "bias_scaling.svg"), ("bias-slope",),
))
_register(ExperimentSpec(
    "laplace-bound",
    "Two-sided exponential bound on the second moment of the exponential semigroup",
    {**RICCATI_KEYS, "model.V": 0.0, **_SIM, "check.starts": (0.5, 1.0, 2.0), "check.times": (1.0, 2.0, 4.0),
     "check.slack": 3.0},
    _laplace_bound, ("laplace.csv", "laplace_bound.svg"), ("bound-x<x>-t<t>",),
))
_register(ExperimentSpec(
    "wasserstein-contraction",
    "Laws started at two points contract in the weighted Wasserstein distance at rate lambda_hat_eps",
    {**RICCATI_KEYS, **_SIM, "sim.horizon": 6.0, "start.x1": 2.0, "start.x2": 0.5, "check.window": (1.0, 5.0),
     "check.metric": "sigma_hat", "check.margin": 0.15},
    _wasserstein, ("distances.csv", "rate_fit.csv", "wasserstein.svg"), ("contraction-rate",),
))
_register(ExperimentSpec(
    "enkf-vs-reduced",
    "The EnKF particle sample variance has the law of the reduced Riccati diffusion",
    {**FILTER_KEYS, "model.variant": "vanilla", "sim.dt": 1e-4, "sim.horizon": 1.0, "sim.paths": 10_000,
     "reduced.scheme": "projected_euler", "check.moments": (1, 2, 3, 4), "check.batches": 32, "check.z_limit": 3.0},
    _enkf_vs_reduced, ("moments.csv", "quantiles.csv", "enkf_vs_reduced.svg"),
    ("moment-<k>-agrees", "particle-runs-finite", "reduced-no-blowups"),
    model_kind="filter",
))
_register(ExperimentSpec(
    "fk-identities",
    "Feynman-Kac representations of the tangent-weighted expectation (bar and hat systems)",
    {**RICCATI_KEYS, "sim.dt": 2e-3, "sim.paths": 1_000_000, "sim.horizon": 1.0, "start.x": 1.0, "check.t": 1.0,
     "check.seeds": 20, "check.identities": ("bar", "hat"), "check.z_limit": 3.0, "check.max_exceed": 2},
    _fk_identities, ("fk.csv", "fk_z_scores.svg"), ("<identity>-identity-f=<function>",),
))
_register(ExperimentSpec(
    "lyapunov-bracket",
    "Long-run average of A - S X lies in the bracket implied by the stationary-mean bounds",
    {**RICCATI_KEYS, "model.A": 0.0, "model.N": 8, "sim.dt": 1e-3, "sim.horizon": 100.0, "sim.paths": 2000,
     "sim.scheme": "tamed_euler", "start.x0": 1.0, "check.slack": 3.0},
    _lyapunov, ("lyapunov.csv",), ("v0-mapping-in-bracket", "vanilla-mapping-below-bound"),
))
_register(ExperimentSpec(
    "poincare-decay",
    "Variance of P_t f from stationarity decays at rate 2 lambda_eps (Poincare inequality)",
    {**RICCATI_KEYS, "model.A": -1.0, "model.V": 0.0, "sim.dt": 1e-3, "sim.horizon": 1.5, "sim.paths": 1,
     "sim.record_dt": 0.1, "sim.scheme": "tamed_euler", "check.function": "x", "check.outer": 512,
     "check.inner": 256, "check.margin": 0.2},
    _poincare, ("variance.csv", "rate_fit.csv", "poincare.svg"), ("variance-decay-rate",),
))
_register(ExperimentSpec(
    "euler-blowup-demo",
    "Raw Euler explodes on the superlinear vanilla EnKF diffusion while tamed Euler does not",
    {**RICCATI_KEYS, "model.A": 20.0, "model.N": 6, "sim.dt": 1e-2, "sim.horizon": 5.0, "sim.paths": 10_000,
     "sim.record_dt": 0.1, "sim.scheme": "tamed_euler", "start.x0": 40.0},
    _blowup, ("blowups.csv", "fraction_blown.csv", "blowup.svg"), ("raw-euler-blows-up", "tamed-euler-stays-finite"),
))
_register(ExperimentSpec(
    "stationarity",
    "Closed-form invariant measures: Gamma-case mean, stationarity of the law, power-law tail exponent",
    {**RICCATI_KEYS, "model.A": -1.0, "model.R": 2.0, "model.eps": 0.7, "sim.dt": 1e-3, "sim.horizon": 10.0,
     "sim.paths": 100_000, "sim.record_dt": 5.0, "sim.scheme": "tamed_euler", "check.times": (0.0, 5.0, 10.0),
     "gamma.A": -1.0, "gamma.R": 1.0, "gamma.U": 1.0, "gamma.eps": 1.0,
     "tail.A": 20.0, "tail.R": 1.0, "tail.S": 1.0, "tail.U": 1.0, "tail.V": 1.0, "tail.eps": 0.2, "tail.N": 6,
     "tail.variant": "vanilla", "tail.x_min": 1e4, "tail.x_max": 1e6},
    _stationarity, ("stationary_moments.csv", "tail.csv", "tail.svg"),
    ("gamma-mean", "moment-<k>-constant-t<t>", "tail-exponent-stated-formula", "tail-exponent-closed-form"),
))


# --- validation and execution ------------------------------------------------------------------------------


class UnknownExperimentError(LookupError):
    """No catalog entry has the requested name."""


def get(name: str) -> ExperimentSpec:
    try:
        return CATALOG[name]
    except KeyError:
        raise UnknownExperimentError(name) from None


def validate(spec: ExperimentSpec, config: ResolvedConfig) -> list[Diagnostic]:
    """Diagnostics for a resolved configuration; errors make a run impossible."""
    out: list[Diagnostic] = []
    try:
        model = spec.model(config)
    except (ParameterDomainError, ConfigError, ValueError) as exc:
        out.append(Diagnostic("error", f"model: {exc}"))
        model = None
    if "sim.dt" in config.values:
        try:
            sim_config(config, 0)
        except ConfigError as exc:
            out.append(Diagnostic("error", str(exc)))
    if isinstance(model, ModelParams) and "check.orders" in config.values:
        for n in config["check.orders"]:
            admissible, reason = es.bracket_admissible(model, int(n))
            if not admissible:
                out.append(Diagnostic("warning", f"order n={n} bracket inadmissible: {reason} "
                                                 "(requires (n-1) eps^2 Vbar < 2)"))
    return out


def describe_version() -> str:
    """Package version, with a git-describe suffix when run from a checkout."""
    try:
        done = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=Path(__file__).parent,
                              capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return __version__
    desc = done.stdout.strip()
    return f"{__version__}+g{desc}" if done.returncode == 0 and desc else __version__


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_table(table: Table, out_dir: Path) -> Path:
    path = out_dir / table.name
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([_cell(v) for v in row])
    return path


@dataclass(frozen=True)
class RunRecord:
    spec: ExperimentSpec
    outcome: Outcome
    manifest_path: Path
    seed: int
    elapsed: float

    @property
    def passed(self) -> bool:
        return self.outcome.passed


def execute(spec: ExperimentSpec, config: ResolvedConfig, out_dir: str | Path) -> RunRecord:
    """Run an experiment and write its CSV tables, SVG figures and manifest."""
    errors = [d for d in validate(spec, config) if d.level == "error"]
    if errors:
        raise ConfigError("; ".join(d.message for d in errors))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = derive_seed(config.master_seed, spec.name)
    start = time.perf_counter()
    outcome = spec.runner(Context(spec, config, seed))
    elapsed = time.perf_counter() - start
    outputs = []
    for table in outcome.tables:
        write_table(table, out_dir)
        outputs.append({"file": table.name, "kind": "csv", "columns": list(table.columns),
                        "description": table.description})
    for figure in outcome.figures:
        svg.line_plot(figure.series, out_dir / figure.name, **figure.options)
        outputs.append({"file": figure.name, "kind": "svg", "description": figure.options.get("title", "")})
    manifest = {
        "experiment": spec.name,
        "claim": spec.claim,
        "version": describe_version(),
        "master_seed": config.master_seed,
        "experiment_seed": seed,
        "params": {k: _json_value(v) for k, v in sorted(config.values.items())},
        "outputs": outputs,
        "checks": [c.as_dict() for c in outcome.checks],
        "summary": {k: _json_value(v) for k, v in sorted(outcome.summary.items())},
        "status": "pass" if outcome.passed else "fail",
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return RunRecord(spec, outcome, manifest_path, seed, elapsed)


def _json_value(v):
    if isinstance(v, tuple):
        return [_json_value(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _json_number(v)
    return v if isinstance(v, str) else format_value(v)
