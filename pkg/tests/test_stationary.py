import csv
import math

import numpy as np
import pytest
from scipy import integrate, stats

from riccati_lab import sde_engine as se
from riccati_lab import stationary as st
from riccati_lab.riccati_core import ModelParams, ParameterDomainError

GAMMA = st.Coefficients(A=-1, R=1, S=0, U=1, V=0, eps=1)
VANILLA_N6 = ModelParams(A=20, R=1, S=1, U=1, V=1, eps=2 / math.sqrt(6))
CASES = {
    "UV_pos": ModelParams(A=-1, R=2, S=1, U=1, V=1, eps=0.7),
    "UV_pos_vanilla": VANILLA_N6,
    "U_pos_V0": ModelParams(A=0, R=1, S=1, U=1, V=0, eps=2 / math.sqrt(8)),
    "U0_V_pos": ModelParams(A=0.5, R=1, S=1, U=0, V=1, eps=0.5),
    "gamma_case": GAMMA,
}


@pytest.fixture(scope="module")
def measures():
    return {name: st.build(p) for name, p in CASES.items()}


def test_regime_classification():
    assert st.classify(CASES["UV_pos"]) == "UV_pos"
    assert st.classify(CASES["U_pos_V0"]) == "U_pos_V0"
    assert st.classify(CASES["U0_V_pos"]) == "U0_V_pos"
    assert st.classify(GAMMA) == "gamma_case"
    with pytest.raises(ParameterDomainError, match="regime"):
        st.classify(ModelParams(A=0, R=1, S=1, U=0, V=0, eps=0.3))
    with pytest.raises(ParameterDomainError, match="regime"):
        st.classify(st.Coefficients(A=1, R=1, S=0, U=1, V=0, eps=0.3))


def test_build_errors():
    with pytest.raises(ParameterDomainError, match="eps>0"):
        st.build(ModelParams(A=0, R=1, S=1, U=1, V=1))
    with pytest.raises(ParameterDomainError, match="repellent"):
        st.build(ModelParams(A=0, R=1, S=1, U=1, V=1, eps=1.5))
    with pytest.raises(ParameterDomainError, match="x>0"):
        st.build(GAMMA).log_density(0.0)


@pytest.mark.parametrize("name", sorted(CASES))
def test_density_matches_scale_potential_definition(name, measures):
    # Independent oracle: integrate 2 Lambda / sigma^2 numerically from x=1.
    m = measures[name]
    c = m.params

    def sigma_sq(x):
        return c.eps**2 * x * (c.U + c.V * x * x)

    def potential(x):
        return integrate.quad(lambda y: 2 * (2 * c.A * y + c.R - c.S * y * y) / sigma_sq(y), 1.0, x, epsrel=1e-12)[0]

    xs = np.array([0.4, 0.8, 1.7, 3.0])
    numeric = np.array([potential(x) - math.log(sigma_sq(x)) for x in xs])
    closed = m.log_density(xs)
    assert np.allclose(np.diff(closed), np.diff(numeric), atol=1e-9)
    assert np.allclose(st.scale_potential(c, xs), [potential(x) for x in xs], atol=1e-9)


@pytest.mark.parametrize("name", sorted(CASES))
def test_normalization_in_linear_coordinates(name, measures):
    m = measures[name]
    lo, hi = m.support_cut
    edges = np.geomspace(lo, hi, 40)
    total = sum(integrate.quad(m.pdf, a, b, epsrel=1e-12, epsabs=0)[0] for a, b in zip(edges[:-1], edges[1:]))
    assert total == pytest.approx(1.0, abs=1e-8)
    assert st.moment(m, 0) == 1.0


@pytest.mark.parametrize("name", sorted(CASES))
def test_cdf_grid(name, measures):
    grid = measures[name].cdf_grid
    assert grid.shape[0] >= 4096
    assert np.all(np.diff(grid[:, 0]) > 0) and np.all(np.diff(grid[:, 1]) >= 0)
    assert grid[0, 1] <= 1e-9 * 1.5 and grid[-1, 1] >= 1 - 1.5e-9


def test_gamma_case_closed_form(measures):
    m = measures["gamma_case"]
    shape, rate = 2.0, 4.0
    assert st.moment(m, 1) == pytest.approx(0.5, abs=1e-6)
    assert st.moment(m, 2) == pytest.approx(shape * (shape + 1) / rate**2, rel=1e-9)
    xs = np.array([0.05, 0.5, 2.0])
    assert np.allclose(m.log_density(xs), stats.gamma.logpdf(xs, shape, scale=1 / rate), atol=1e-9)
    assert np.allclose(m.cdf(xs), stats.gamma.cdf(xs, shape, scale=1 / rate), atol=1e-8)


def test_weighted_gaussian_regime_log_density(measures):
    m = measures["U_pos_V0"]
    c = m.params
    xs = np.array([0.2, 0.9, 2.5])
    expected = (2 * c.R / (c.eps**2 * c.U) - 1) * np.log(xs) - c.S / (c.U * c.eps**2) * (xs - 2 * c.A / c.S) ** 2
    assert np.allclose(np.diff(m.log_density(xs)), np.diff(expected), atol=1e-12)


def test_heavy_tail_exponent_and_moment_predicates(measures):
    m = measures["UV_pos_vanilla"]
    assert st.tail_exponent(VANILLA_N6) == pytest.approx(-6.0)
    xs = np.geomspace(1e4, 1e6, 20)
    slope = np.polyfit(np.log(xs), m.log_density(xs), 1)[0]
    assert slope == pytest.approx(-6.0, abs=0.01)
    assert [st.stationary_moment_finite(VANILLA_N6, k) for k in range(7)] == [True] * 5 + [False] * 2
    assert st.moment(m, 6) == math.inf
    assert math.isfinite(st.moment(m, 4))
    # Process-moment condition (n-1) Vbar eps^2 < 2 is a different statement.
    assert st.process_moment_condition(VANILLA_N6, 3) and not st.process_moment_condition(VANILLA_N6, 4)
    assert st.tail_exponent(CASES["U_pos_V0"]) == -math.inf
    assert all(st.stationary_moment_finite(CASES["U_pos_V0"], k) for k in range(20))


def test_divergence_threshold_matches_tail_condition():
    # (n-2)(V/S) eps^2 >= 2 is exactly where the n-th stationary moment diverges.
    for eps in (0.5, 0.8, 1.0):
        p = ModelParams(A=0, R=1, S=1, U=0.5, V=1, eps=eps)
        for n in range(1, 12):
            assert st.stationary_moment_finite(p, n) == ((n - 2) * p.V / p.S * eps**2 < 2)


def test_sampling_is_reproducible_and_distributed(measures):
    m = measures["U0_V_pos"]
    a = st.sample(m, 50_000, seed=9)
    assert np.array_equal(a, st.sample(m, 50_000, seed=9))
    assert not np.array_equal(a, st.sample(m, 50_000, seed=10))
    assert np.all(a > 0)
    assert stats.kstest(a, m.cdf).pvalue > 1e-3
    g = measures["gamma_case"]
    assert stats.kstest(st.sample(g, 50_000, seed=3), stats.gamma(2.0, scale=0.25).cdf).pvalue > 1e-3


@pytest.mark.parametrize("name", ["UV_pos", "U_pos_V0", "U0_V_pos"])
def test_stationary_mean_lies_in_bracket(name, measures):
    lower, upper = st.stationary_mean_bounds(CASES[name])
    assert lower <= st.moment(measures[name], 1) <= upper


def test_stationary_mean_bracket_examples():
    lo, hi = st.stationary_mean_bounds(ModelParams(A=0.3, R=1, S=2, U=1, V=1, eps=0.0))
    assert lo == pytest.approx(hi)
    lo, _ = st.stationary_mean_bounds(ModelParams(A=0, R=1, S=1, U=1, V=0, eps=2 / math.sqrt(8)))
    assert 0 - lo * 1 == pytest.approx(-math.sqrt(0.5), abs=1e-12)
    lo, _ = st.stationary_mean_bounds(ModelParams(A=0, R=1, S=1, U=1, V=1, eps=2 / math.sqrt(8)))
    assert 0 - lo * 1 == pytest.approx(-math.sqrt(0.75) / 1.5, abs=1e-12)
    with pytest.raises(ParameterDomainError, match="< 1"):
        st.stationary_mean_bounds(ModelParams(A=0, R=1, S=1, U=1, V=1, eps=1.0))


def test_origin_is_repelling():
    # The scale density exp(-U_eps) behaves like x^{-2R/(eps^2 U)} near 0, not integrable when eps^2 U/R < 2.
    p = CASES["U_pos_V0"]
    xs = np.array([1e-6, 1e-5])
    slope = np.diff(np.log(st.scale_derivative(p, xs))) / np.diff(np.log(xs))
    assert slope[0] == pytest.approx(-2 * p.R / (p.eps**2 * p.U), rel=1e-4)
    assert slope[0] <= -1
    speed = st.speed_density(p, np.array([0.5, 1.0]))
    m = st.build(p)
    assert speed[0] / speed[1] == pytest.approx(math.exp(m.log_density(0.5) - m.log_density(1.0)))


def test_csv_export(tmp_path, measures):
    path = st.export_csv(measures["U_pos_V0"], tmp_path / "pdf.csv", n_points=200)
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "pdf", "cdf"]
    assert 150 <= len(rows) - 1 <= 200
    cdf = np.array([float(r[2]) for r in rows[1:]])
    assert np.all(np.diff(cdf) >= 0)


def test_long_path_occupation_matches_density():
    p = CASES["U_pos_V0"]
    m = st.build(p)
    cfg = se.SimConfig(dt=1e-3, horizon=1100.0, n_paths=1, record_stride=100, seed=31)
    ens = se.simulate_riccati(p, 1.0, cfg)
    occupation = ens.states[0, ens.times >= 100.0]
    assert stats.kstest(occupation, m.cdf).statistic <= 0.02


def test_stationary_start_keeps_moments():
    p = CASES["UV_pos"]
    m = st.build(p)
    n = 20_000
    x0 = st.sample(m, n, seed=5)
    cfg = se.SimConfig(dt=1e-3, horizon=4.0, n_paths=n, record_stride=2000, seed=6)
    s = se.power_sums(p, x0, cfg, 2).sums.sum(axis=0)
    means = s[:, 1] / s[:, 0]
    second = s[:, 2] / s[:, 0]
    var = second - means**2
    for j in range(1, means.size):
        assert abs(means[j] - means[0]) < 3 * math.sqrt(2 * var[0] / n)
    assert means[0] == pytest.approx(st.moment(m, 1), rel=0.02)
