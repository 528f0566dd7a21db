import csv
import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from riccati_lab import estimators as es
from riccati_lab import riccati_core as rc
from riccati_lab import sde_engine as se
from riccati_lab.riccati_core import ModelParams, ParameterDomainError

UNIT = ModelParams(A=0, R=1, S=1, U=1, V=1, eps=0.2)
U_ONLY = ModelParams(A=0, R=1, S=1, U=1, V=0, eps=0.2)


def brute_force_w1(a, b, transform=lambda x: x):
    # Optimal assignment over all pairings (Hungarian algorithm), equal sample sizes.
    ga, gb = transform(np.asarray(a)), transform(np.asarray(b))
    cost = np.abs(ga[:, None] - gb[None, :])
    rows, cols = linear_sum_assignment(cost)
    return cost[rows, cols].mean()


# --- moments -------------------------------------------------------------------


def test_moments_at_zero_noise_equal_the_flow():
    p = UNIT.with_(eps=0.0)
    cfg = se.SimConfig(dt=1e-3, horizon=2.0, n_paths=64, record_stride=250, seed=1)
    sums = se.power_sums(p, 0.5, cfg, 3)
    report = es.mc_moments(sums, 3, p, 0.5)
    flow = np.asarray(rc.phi(sums.times, 0.5, p))
    # Equal to the flow up to the O(dt) error of the scheme; no Monte Carlo error.
    assert np.allclose(report.norms, flow, rtol=1e-3)
    assert np.all(report.se <= 1e-12)
    # Without noise both bracket curves collapse onto the flow.
    assert report.admissible
    assert np.allclose(report.lower, flow, rtol=1e-12) and np.allclose(report.upper, flow, rtol=1e-12)


def test_second_moment_bracket_holds():
    cfg = se.SimConfig(dt=1e-3, horizon=5.0, n_paths=20_000, record_stride=250, seed=2)
    report = es.mc_moments(se.power_sums(U_ONLY, 0.0, cfg, 2), 2, U_ONLY, 0.0)
    assert report.admissible
    assert report.all_pass
    assert np.all(report.se[1:] > 0)
    # The bracket is non-trivial: the n-norm sits strictly above the lower curve late on.
    assert report.norms[-1] > report.lower[-1]


def test_inadmissible_order_is_flagged_without_bracket():
    vanilla = ModelParams(A=20, R=1, S=1, U=1, V=1, eps=2 / math.sqrt(6))
    admissible, reason = es.bracket_admissible(vanilla, 6)
    assert not admissible and "10/3" not in reason and "3.33333" in reason
    cfg = se.SimConfig(dt=1e-3, horizon=0.05, n_paths=64, seed=3)
    report = es.mc_moments(se.power_sums(vanilla, 30.0, cfg, 6), 6, vanilla, 30.0)
    assert not report.admissible
    assert report.lower is None and report.passes is None and not report.all_pass
    assert np.all(np.isfinite(report.norms))


def test_moments_from_path_ensemble_match_power_sums():
    cfg = se.SimConfig(dt=1e-3, horizon=1.0, n_paths=4096, record_stride=500, seed=4)
    ens = se.simulate_riccati(UNIT, 1.0, cfg)
    sums = se.power_sums(UNIT, 1.0, cfg, 2)
    a = es.mc_moments(ens, 2)
    b = es.mc_moments(sums, 2, UNIT, 1.0)
    assert np.allclose(a.norms, b.norms, rtol=1e-12)
    assert a.se[-1] == pytest.approx(b.se[-1], rel=0.5)
    with pytest.raises(ValueError, match="params and x0"):
        es.mc_moments(sums, 2)


# --- Wasserstein ---------------------------------------------------------------


def test_wasserstein_identical_and_point_masses():
    x = np.random.default_rng(0).lognormal(size=100)
    assert es.wasserstein_1d(x, x, "sigma_hat", UNIT) == 0.0
    centred = ModelParams(A=0, R=1, S=1, U=1, V=1)
    assert rc.derive(centred).iota == 0.0
    assert es.wasserstein_1d([math.e], [1.0], "sigma_hat", centred) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("metric", ["euclid", "sigma_hat", "sigma_1"])
def test_wasserstein_matches_optimal_assignment(metric):
    rng = np.random.default_rng(7)
    p = ModelParams(A=0.5, R=1, S=2, U=1, V=1, eps=0.3)
    for size in (5, 17, 64):
        a, b = rng.lognormal(size=size), rng.lognormal(0.4, 0.7, size=size)
        transform = (lambda x: x) if metric == "euclid" else (lambda x: rc.metric_transform(x, metric, p))
        assert es.wasserstein_1d(a, b, metric, p) == pytest.approx(brute_force_w1(a, b, transform), rel=1e-12, abs=1e-14)


def test_wasserstein_errors():
    with pytest.raises(ValueError, match="empty"):
        es.wasserstein_1d([], [1.0])
    with pytest.raises(ParameterDomainError, match="positive"):
        es.wasserstein_1d([0.0, 1.0], [1.0], "sigma_hat", UNIT)
    with pytest.raises(ValueError, match="needs params"):
        es.wasserstein_1d([1.0], [1.0], "sigma_1")
    with pytest.raises(ValueError, match="unknown metric"):
        es.wasserstein_1d([1.0], [1.0], "hellinger", UNIT)


def test_wasserstein_contraction_rate():
    cfg = se.SimConfig(dt=1e-3, horizon=6.0, n_paths=20_000, record_stride=250, seed=8)
    decay = es.wasserstein_decay(UNIT, 2.0, 0.5, cfg, window=(1.0, 5.0))
    lam = rc.derive(UNIT).lambda_
    lam_hat = rc.kappa_derive(UNIT, 1.0).lambda_hat_eps
    assert decay.fit.rate >= lam_hat - 0.15 * lam
    assert not decay.fit.flagged


# --- rate fits ---------------------------------------------------------------------


def test_fit_rate_exact_exponential():
    t = np.linspace(0, 8, 81)
    fit = es.fit_rate(t, np.exp(-2 * t))
    assert fit.rate == pytest.approx(2.0, abs=1e-12)
    assert fit.window == (2.0, 6.0)
    assert fit.r_squared == pytest.approx(1.0) and not fit.flagged


def test_fit_rate_deterministic_gap_tends_to_lambda():
    p = ModelParams(A=0, R=1, S=1, U=1, V=1)
    t = np.linspace(0, 8, 161)
    gap = np.abs(np.asarray(rc.phi(t, 3.0, p)) - np.asarray(rc.phi(t, 0.2, p)))
    assert es.fit_rate(t, gap, (2.0, 6.0)).rate == pytest.approx(rc.derive(p).lambda_, rel=0.01)


def test_fit_rate_errors_and_flagging():
    t = np.linspace(0, 8, 81)
    with pytest.raises(ValueError, match=">= 5 points"):
        es.fit_rate(t, np.exp(-t), (2.0, 2.2))
    with pytest.raises(ValueError, match="positive"):
        es.fit_rate(t, np.exp(-t) - 0.01)
    noisy = np.exp(np.random.default_rng(1).normal(size=t.size))
    assert es.fit_rate(t, noisy).flagged


# --- Laplace bound -------------------------------------------------------------------


def test_two_sided_laplace_bound_and_rate_band():
    cfg = se.SimConfig(dt=1e-3, horizon=4.0, n_paths=20_000, seed=9)
    report = es.laplace_bounds(UNIT, [0.5, 1.0, 2.0], [1.0, 2.0, 4.0], cfg)
    assert len(report.entries) == 9
    assert report.all_pass
    at_one = [e for e in report.entries if e[0] == 1.0]
    ts, values = [e[1] for e in at_one], [e[2] for e in at_one]
    slope = -np.polyfit(ts, np.log(values), 1)[0]
    assert rc.kappa_derive(UNIT, 1.0).lambda_hat_eps_kappa <= slope <= rc.derive(UNIT).lambda_


def test_laplace_check_times_must_lie_on_grid():
    with pytest.raises(ValueError, match="multiple of dt"):
        es.laplace_bounds(UNIT, [1.0], [1.0005], se.SimConfig(dt=1e-3, horizon=1.0, n_paths=8))


# --- Feynman-Kac ------------------------------------------------------------------------


def test_fk_at_zero_noise_is_the_deterministic_identity():
    p = UNIT.with_(eps=0.0)
    cfg = se.SimConfig(dt=1e-3, horizon=1.0, n_paths=8, seed=10)
    for identity in ("bar", "hat"):
        (res,) = es.fk_check(p, 1.0, 1.0, {"expneg": lambda x: np.exp(-x)}, cfg, identity)
        target = math.exp(-float(rc.phi(1.0, 1.0, p))) * float(rc.phi_derivative(1, 1.0, 1.0, p))
        assert res.lhs == pytest.approx(target, rel=1e-6)
        assert res.rhs == pytest.approx(target, rel=1e-6)
        assert res.z == 0.0


@pytest.mark.parametrize("identity", ["bar", "hat"])
def test_fk_identities_hold(identity):
    cfg = se.SimConfig(dt=2e-3, horizon=1.0, n_paths=100_000, seed=11)
    results = es.fk_check(UNIT, 1.0, 1.0, [np.ones_like, lambda x: np.exp(-x)], cfg, identity)
    for res in results:
        assert abs(res.z) <= 3
        assert res.n_flagged == 0
        assert res.lhs_se > 0 and res.rhs_se > 0


def test_fk_preconditions():
    cfg = se.SimConfig(dt=2e-3, horizon=1.0, n_paths=16)
    with pytest.raises(ValueError, match="t <= 2"):
        es.fk_check(UNIT, 1.0, 3.0, np.ones_like, cfg)
    with pytest.raises(ValueError, match="'bar' or 'hat'"):
        es.fk_check(UNIT, 1.0, 1.0, np.ones_like, cfg, "tilde")
    strong = UNIT.with_(eps=2.0)
    with pytest.raises(ParameterDomainError):
        es.fk_check(strong, 1.0, 1.0, np.ones_like, cfg, "hat")


# --- Lyapunov and Poincare -------------------------------------------------------------------


def test_lyapunov_at_fixed_point():
    p = UNIT.with_(eps=0.0)
    d = rc.derive(p)
    est = es.lyapunov(p, d.varpi_plus, 100.0, se.SimConfig(dt=1e-2, horizon=100.0, n_paths=4))
    assert est.value == pytest.approx(-d.lambda_ / 2, abs=1e-10)
    assert est.lower == pytest.approx(est.upper)


def test_lyapunov_within_stationary_bracket():
    p = ModelParams(A=0, R=1, S=1, U=1, V=0, eps=2 / math.sqrt(8))
    est = es.lyapunov(p, 1.0, 100.0, se.SimConfig(dt=5e-3, horizon=100.0, n_paths=256, seed=12))
    assert est.lower == pytest.approx(-1.0) and est.upper == pytest.approx(-math.sqrt(0.5))
    assert est.lower - 3 * est.se <= est.value <= est.upper + 3 * est.se
    vanilla = ModelParams(A=0, R=1, S=1, U=1, V=1, eps=2 / math.sqrt(8))
    est = es.lyapunov(vanilla, 1.0, 100.0, se.SimConfig(dt=5e-3, horizon=100.0, n_paths=256, seed=13))
    assert est.upper == pytest.approx(-0.57735, abs=1e-5)
    assert est.value <= est.upper + 3 * est.se
    with pytest.raises(ValueError, match=">= 100"):
        es.lyapunov(p, 1.0, 50.0, se.SimConfig(dt=1e-2, horizon=50.0, n_paths=4))


POINCARE = ModelParams(A=-1, R=1, S=1, U=1, V=0, eps=0.2)


def test_poincare_constant_function_has_zero_variance():
    cfg = se.SimConfig(dt=1e-3, horizon=0.5, n_paths=1, record_stride=100, seed=14)
    report = es.poincare_decay(POINCARE, lambda x: np.ones_like(x), cfg, n_outer=64, n_inner=16)
    assert np.all(report.variance == 0.0)
    assert report.fit is None and not report.passes


def test_poincare_decay_rate():
    cfg = se.SimConfig(dt=1e-3, horizon=1.5, n_paths=1, record_stride=100, seed=15)
    report = es.poincare_decay(POINCARE, lambda x: x, cfg)
    assert report.lambda_eps == pytest.approx(1 + math.sqrt(3 * 0.99), abs=1e-10)
    assert report.fit.rate >= 2 * report.lambda_eps * 0.8
    assert report.passes and not report.fit.flagged


def test_poincare_preconditions_and_small_noise_limit():
    cfg = se.SimConfig(dt=1e-3, horizon=0.5, n_paths=1)
    with pytest.raises(ParameterDomainError, match="V=0"):
        es.poincare_decay(UNIT, lambda x: x, cfg)
    with pytest.raises(ParameterDomainError, match="> 0"):
        es.poincare_decay(ModelParams(A=3, R=1, S=1, U=1, V=0, eps=0.2), lambda x: x, cfg)
    tiny = POINCARE.with_(eps=1e-4)
    assert rc.rate_lambda_eps(tiny) == pytest.approx(1 + math.sqrt(3), abs=1e-7)


# --- reproducibility and export ------------------------------------------------------------------


def test_estimators_are_deterministic():
    cfg = se.SimConfig(dt=2e-3, horizon=1.0, n_paths=2000, seed=16)
    a = es.fk_check(UNIT, 1.0, 1.0, np.ones_like, cfg)
    b = es.fk_check(UNIT, 1.0, 1.0, np.ones_like, cfg)
    assert a == b
    c = es.fk_check(UNIT, 1.0, 1.0, np.ones_like, cfg.with_(seed=17))
    assert a != c


def test_batch_moment_spread():
    x = np.random.default_rng(3).normal(size=64_000)
    spread = es.batch_moment_spread(x, [2, 4])
    assert spread[2] < 1e-12
    assert 0 < spread[4] < 0.1


def test_reports_export_csv(tmp_path):
    t = np.linspace(0, 8, 81)
    fit = es.fit_rate(t, np.exp(-t))
    path = es.export_csv(fit, tmp_path / "fit.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == list(es.RateFit.header)
    assert rows[1][-1] == "false" and float(rows[1][2]) == pytest.approx(1.0)
    cfg = se.SimConfig(dt=1e-3, horizon=1.0, n_paths=256, record_stride=500, seed=18)
    report = es.mc_moments(se.power_sums(UNIT, 1.0, cfg, 2), 2, UNIT, 1.0)
    rows = list(csv.reader(es.export_csv(report, tmp_path / "m.csv").open()))
    assert rows[0] == ["t", "n", "norm", "se", "lower", "upper", "pass"]
    assert len(rows) == 1 + report.times.size
