import math

import numpy as np
import pytest
from scipy import integrate

from oracles import random_parameter_sets, rk4_riccati
from riccati_lab import riccati_core as rc
from riccati_lab.riccati_core import ModelParams, ParameterDomainError


def test_domain_errors():
    with pytest.raises(ParameterDomainError, match="S>0"):
        ModelParams(A=0, R=1, S=0)
    with pytest.raises(ParameterDomainError, match="R>0"):
        ModelParams(A=0, R=0, S=1)
    with pytest.raises(ParameterDomainError):
        ModelParams(A=0, R=1, S=1, U=-1)
    with pytest.raises(ParameterDomainError):
        ModelParams(A=0, R=1, S=1, eps_bar=1.5)


def test_derived_parameters_symmetric_case():
    d = rc.derive(ModelParams(A=0, R=1, S=1))
    assert d.lambda_ == pytest.approx(2.0)
    assert d.varpi_plus == pytest.approx(1.0)
    assert d.varpi_minus == pytest.approx(-1.0)
    assert d.iota == 0.0 and d.jmath == 0.0
    assert d.varpi == pytest.approx(2.0)
    assert rc.derive(ModelParams(A=0, R=1, S=1, U=1)).zeta == pytest.approx(1.0)


def test_derived_parameters_large_drift():
    d = rc.derive(ModelParams(A=20, R=1, S=1))
    assert d.lambda_ == pytest.approx(2 * math.sqrt(401), rel=1e-14)
    assert d.lambda_ == pytest.approx(40.0500, abs=5e-5)
    assert d.varpi_plus == pytest.approx(40.0250, abs=5e-5)


def test_equilibria_are_drift_roots():
    for A, R, S, _ in random_parameter_sets(10):
        p = ModelParams(A=A, R=R, S=S)
        d = rc.derive(p)
        assert p.drift(d.varpi_plus) == pytest.approx(0.0, abs=1e-12)
        assert p.drift(d.varpi_minus) == pytest.approx(0.0, abs=1e-12)
        assert p.drift_derivative(d.varpi_plus) == pytest.approx(-d.lambda_)


def test_kappa_parameters():
    k = rc.kappa_derive(ModelParams(A=0, R=1, S=1, U=1, V=1), kappa=1.0)
    assert k.iota_kappa == pytest.approx(1.0)
    assert k.jmath_kappa == pytest.approx(1.0)
    # zeta_kappa = (kappa + 1)(Ubar + Vbar) when A = 0.
    assert k.zeta_kappa == pytest.approx(4.0)
    for kappa in (0.5, 2.0, 3.0):
        kk = rc.kappa_derive(ModelParams(A=0, R=1, S=1, U=1, V=1), kappa=kappa)
        assert kk.zeta_kappa == pytest.approx((kappa + 1) * 2.0)
    k2 = rc.kappa_derive(ModelParams(A=0, R=1, S=1, U=1, V=0, eps=0.2), kappa=1.0)
    assert k2.lambda_hat_eps == pytest.approx(1.96)
    for A, R, S, _ in random_parameter_sets(5):
        kp = rc.kappa_derive(ModelParams(A=A, R=R, S=S, U=1, V=1, eps=0.0), kappa=1.3)
        assert kp.lambda_hat_eps_kappa == pytest.approx(rc.derive(ModelParams(A=A, R=R, S=S)).lambda_)


def test_phi_examples():
    p = ModelParams(A=0, R=1, S=1)
    assert rc.phi(1.0, 0.0, p) == pytest.approx(math.tanh(1.0), abs=1e-14)
    assert rc.phi(1.0, 0.0, p) == pytest.approx(0.761594, abs=5e-7)
    assert rc.phi(3.7, 1.0, p) == pytest.approx(1.0, abs=1e-15)
    assert rc.phi(1e4, 0.3, p) == pytest.approx(1.0)
    big = ModelParams(A=20, R=1, S=1)
    assert rc.phi(50.0, 0.0, big) == pytest.approx(rc.derive(big).varpi_plus)
    with pytest.raises(ValueError):
        rc.phi(-1.0, 0.0, p)


def test_phi_matches_rk4():
    for A, R, S, x0 in random_parameter_sets(20):
        p = ModelParams(A=A, R=R, S=S)
        ts, xs = rk4_riccati(A, R, S, x0, 10.0, h=1e-3)
        assert np.max(np.abs(rc.phi(ts, x0, p) - xs)) < 1e-8


def test_semigroup_property():
    for A, R, S, x0 in random_parameter_sets(10, seed=5):
        p = ModelParams(A=A, R=R, S=S)
        for s, t in ((0.3, 0.9), (1.0, 2.5)):
            assert rc.phi(s + t, x0, p) == pytest.approx(rc.phi(t, rc.phi(s, x0, p), p), rel=1e-12)


def test_phi_derivative_examples():
    p = ModelParams(A=0, R=1, S=1)
    assert rc.phi_derivative(1, 0.0, 2.5, p) == pytest.approx(1.0)
    assert rc.phi_derivative(1, 1.0, 0.0, p) == pytest.approx(1.0 / math.cosh(1.0) ** 2, rel=1e-12)
    assert rc.phi_derivative(1, 1.0, 0.0, p) == pytest.approx(0.419974, abs=1e-6)
    for t in (0.1, 1.0, 5.0):
        for x in (0.0, 0.5, 3.0):
            assert rc.phi_derivative(2, t, x, p) < 0


def test_phi_derivatives_match_finite_differences():
    for A, R, S, x0 in random_parameter_sets(8, seed=9):
        p = ModelParams(A=A, R=R, S=S)
        x = x0 + 0.5
        t = 0.7
        h = 1e-4
        fd1 = (rc.phi(t, x + h, p) - rc.phi(t, x - h, p)) / (2 * h)
        fd2 = (rc.phi(t, x + h, p) - 2 * rc.phi(t, x, p) + rc.phi(t, x - h, p)) / h**2
        d1 = (rc.phi_derivative(1, t, x + h, p) - rc.phi_derivative(1, t, x - h, p)) / (2 * h)
        d2 = (rc.phi_derivative(2, t, x + h, p) - rc.phi_derivative(2, t, x - h, p)) / (2 * h)
        assert rc.phi_derivative(1, t, x, p) == pytest.approx(fd1, rel=1e-7)
        assert rc.phi_derivative(2, t, x, p) == pytest.approx(fd2, rel=1e-4, abs=1e-7)
        assert rc.phi_derivative(2, t, x, p) == pytest.approx(d1, rel=1e-6, abs=1e-10)
        assert rc.phi_derivative(3, t, x, p) == pytest.approx(d2, rel=1e-6, abs=1e-10)


def test_exp_semigroup_and_lower_constant():
    p = ModelParams(A=0.3, R=1.2, S=0.8)
    d = rc.derive(p)
    assert rc.exp_semigroup(2.0, d.varpi_plus, p) == pytest.approx(math.exp(-d.lambda_))
    ts = np.linspace(0, 8, 81)
    for x in (0.0, 1.0, 5.0):
        lower = rc.varpi_of_x(x, p) ** 2 * np.exp(-d.lambda_ * ts)
        assert np.all(rc.phi_derivative(1, ts, x, p) >= lower * (1 - 1e-12))


def test_phi_star_and_inverse():
    p = ModelParams(A=0, R=1, S=1, U=1, V=1, eps=0.3)
    d = rc.derive(p)
    assert rc.phi_star(0.0, p) == pytest.approx(d.varpi_plus)
    assert rc.phi_star(2 * d.varpi_plus, p) == pytest.approx(2 * d.varpi_plus)
    inv = ModelParams(A=0, R=1 + 0.09, S=1 - 0.09)
    assert rc.phi_minus_star(1.0, p) == pytest.approx(max(1.0, rc.derive(inv).varpi_plus))
    ts = np.linspace(0, 10, 201)
    assert np.max(rc.phi(ts, 0.0, p)) <= rc.phi_star(0.0, p) + 1e-12


def test_inverse_family_is_involutive_and_reciprocal():
    p = ModelParams(A=0.4, R=1.5, S=0.7, U=0.0, V=0.0, eps=0.0)
    inv = rc.family(p, "inverse").derived
    back = rc.family(inv, "inverse").derived
    assert (back.A, back.R, back.S) == pytest.approx((p.A, p.R, p.S))
    # At eps = 0 the inverse flow is the reciprocal of the flow.
    for t in (0.2, 1.0, 3.0):
        assert rc.phi(t, 1.0 / 2.0, inv) == pytest.approx(1.0 / rc.phi(t, 2.0, p), rel=1e-12)


def test_families():
    p = ModelParams(A=0, R=1, S=1, U=1, V=1, eps=0.5)
    same = rc.family(p, "modified", n=1).derived
    assert (same.R, same.S) == (p.R, p.S)
    zero = rc.family(p.with_(eps=0.0), "modified", n=5).derived
    assert (zero.R, zero.S) == (p.R, p.S)
    hat = rc.family(p, "hat").derived
    assert hat.R == pytest.approx(0.875) and hat.S == pytest.approx(0.875)
    bar = rc.family(p.with_(eps=0.2), "bar").derived
    assert bar.R == pytest.approx(1.02) and bar.S == pytest.approx(0.94)
    mod = rc.family(p.with_(eps=0.2), "modified", n=3).derived
    assert mod.R == pytest.approx(1.04) and mod.S == pytest.approx(0.96)
    neg = rc.family(p.with_(eps=0.2, V=0.0), "modified", n=-1).derived
    assert neg.R == pytest.approx(1.0 - 0.04)


def test_family_domain_errors_name_inequality():
    p = ModelParams(A=20, R=1, S=1, U=1, V=1, eps=2 / math.sqrt(6))
    with pytest.raises(ParameterDomainError, match=r"\(n-1\) eps\^2 Vbar"):
        rc.family(p, "modified", n=6)
    with pytest.raises(ParameterDomainError, match="bar"):
        rc.family(p, "bar")


def test_modified_family_orders_the_flows():
    p = ModelParams(A=0, R=1, S=1, U=1, V=0.5, eps=0.3)
    ts = np.linspace(0, 6, 61)
    lower = rc.modified_phi(ts, 0.5, p, -1)
    base = rc.phi(ts, 0.5, p)
    upper = rc.modified_phi(ts, 0.5, p, 3)
    assert np.all(lower <= base + 1e-14) and np.all(base <= upper + 1e-14)


def test_comparison_bound():
    p = ModelParams(A=0, R=1, S=1)
    assert rc.comparison_bound(p, p, 0.0) == pytest.approx(0.0)
    pb = ModelParams(A=0, R=0.9, S=1.1)
    lam_bar = 2 * math.sqrt(0.99)
    expected = 2 / (2 + lam_bar) * 2 * 2 * (0.1 + 0.1 * 1.0)
    assert rc.comparison_bound(p, pb, 0.0) == pytest.approx(expected)
    ts, xs = rk4_riccati(0, 1, 1, 0.0, 20.0, h=1e-3)
    _, xb = rk4_riccati(0, 0.9, 1.1, 0.0, 20.0, h=1e-3)
    assert np.max(xs - xb) <= rc.comparison_bound(p, pb, 0.0)
    assert rc.comparison_bound(p, pb, 100.0) / 100.0**2 == pytest.approx(2 / (2 + lam_bar) * 2 * 2 * 0.1, rel=1e-3)


def test_rate_closed_forms():
    assert rc.rate_lambda_eps(ModelParams(A=0, R=1, S=1, U=1, V=0)) == pytest.approx(math.sqrt(3))
    assert rc.rate_lambda_eps(ModelParams(A=0, R=1, S=1, U=0, V=1)) == pytest.approx(math.sqrt(3))
    for eps in (0.1, 0.5, 1.0):
        for A in (-2.0, -0.5):
            p = ModelParams(A=A, R=1, S=1, U=1, V=0, eps=eps)
            lam = rc.derive(p).lambda_
            jm = abs(rc.derive(p).jmath)
            # The rate of the variance decay, 2 lambda_eps, beats the deterministic rate.
            ratio = 2 * rc.rate_lambda_eps(p) / lam
            assert ratio == pytest.approx((jm + math.sqrt(3 * (1 - eps**2 / 4))) / math.sqrt(1 + jm**2))
            assert ratio > 1
            assert ratio >= (jm + math.sqrt(3 * (1 - eps**2 / 2))) / math.sqrt(1 + jm**2)


@pytest.mark.parametrize(
    "params",
    [
        ModelParams(A=0, R=1, S=1, U=1, V=0, eps=0.2),
        ModelParams(A=-1, R=1, S=1, U=1, V=0, eps=0.2),
        ModelParams(A=0.5, R=2, S=0.5, U=3, V=0, eps=0.6),
        ModelParams(A=0, R=1, S=1, U=0, V=1, eps=0.3),
        ModelParams(A=-0.3, R=1.5, S=2, U=0, V=0.7, eps=0.5),
    ],
)
def test_closed_form_rate_equals_numerical_minimum(params):
    assert rc.numeric_lambda_eps(params) == pytest.approx(rc.rate_lambda_eps(params), rel=1e-9, abs=1e-9)


def test_general_branch_is_a_lower_bound():
    p = ModelParams(A=0, R=1, S=1, U=1, V=1, eps=0.2)
    assert rc.rate_lambda_eps(p) <= rc.numeric_lambda_eps(p)


def test_tangent_potential_matches_definition():
    p = ModelParams(A=0.3, R=1.2, S=0.9, U=0.7, V=0.4, eps=0.35)
    xs = np.array([0.2, 1.0, 3.5])
    h = 1e-5

    def s1(x):
        return p.sigma1(x)

    d1 = (s1(xs + h) - s1(xs - h)) / (2 * h)
    d2 = (s1(xs + h) - 2 * s1(xs) + s1(xs - h)) / h**2
    expected = -p.drift_derivative(xs) + d1 / s1(xs) * p.drift(xs) + 0.5 * p.eps**2 * s1(xs) * d2
    assert rc.potential_H(p, xs) == pytest.approx(expected, rel=1e-5)


def test_hat_potential():
    p = ModelParams(A=0, R=1, S=1)
    assert rc.potential_H_hat(p, 1.0) == pytest.approx(2.0)
    for A, R, S, _ in random_parameter_sets(5, seed=3):
        q = ModelParams(A=A, R=R, S=S)
        _, value = rc.minimize_on_log_grid(lambda x: rc.potential_H_hat(q, x), rc.derive(q).varpi_plus)
        assert value == pytest.approx(rc.derive(q).lambda_, rel=1e-9)
    noisy = ModelParams(A=0, R=1, S=1, U=1, V=1, eps=0.2)
    grid = np.exp(np.linspace(math.log(1e-3), math.log(1e3), 4001))
    assert np.min(rc.potential_H_hat(noisy, grid)) >= rc.kappa_derive(noisy).lambda_hat_eps - 1e-12


def test_metric_examples():
    p = ModelParams(A=0, R=1, S=1, U=1, V=0)
    assert rc.metric_d(2.0, 2.0, "sigma_hat", p) == 0.0
    assert rc.metric_d(math.e, 1.0, "sigma_hat", p) == pytest.approx(1.0)
    assert rc.metric_d(4.0, 1.0, "sigma_1", p) == pytest.approx(2.0)
    with pytest.raises(ParameterDomainError):
        rc.metric_d(0.0, 1.0, "sigma_1", p)


def test_sigma_hat_metric_matches_quadrature():
    p = ModelParams(A=0.5, R=1, S=1)
    iota = rc.derive(p).iota
    value, _ = integrate.quad(lambda z: z ** (-1 - iota), 0.5, 3.0)
    assert rc.metric_d(0.5, 3.0, "sigma_hat", p) == pytest.approx(value, rel=1e-10)


@pytest.mark.parametrize("U,V", [(1.0, 1.0), (0.3, 2.0), (0.0, 1.5), (2.0, 0.0)])
def test_sigma_1_metric_transform_matches_quadrature(U, V):
    p = ModelParams(A=0, R=1, S=1, U=U, V=V)
    for a, b in ((0.1, 0.4), (0.5, 7.0), (2.0, 30.0)):
        value, _ = integrate.quad(lambda z: 1 / p.sigma1(z), a, b, epsrel=1e-12)
        g = rc.metric_transform(np.array([a, b]), "sigma_1", p)
        assert g[1] - g[0] == pytest.approx(value, rel=1e-9)
        assert rc.metric_d(a, b, "sigma_1", p) == pytest.approx(value, rel=1e-9)


def test_metric_triangle_inequality():
    p = ModelParams(A=0, R=1, S=1, U=1, V=1)
    pts = [0.1, 0.7, 2.0, 9.0]
    for which in ("sigma_hat", "sigma_1"):
        for a in pts:
            for b in pts:
                assert rc.metric_d(a, b, which, p) == pytest.approx(rc.metric_d(b, a, which, p))
                for c in pts:
                    assert rc.metric_d(a, c, which, p) <= rc.metric_d(a, b, which, p) + rc.metric_d(b, c, which, p) + 1e-12


def test_bound_functions_examples():
    p = ModelParams(A=0, R=1, S=1, U=1, V=0, eps=0.0)
    b = rc.bound_functions(p, 1.0, n=1)
    assert b.v == pytest.approx(2.0)
    # w_bar at eps=0 with varpi_bar_lambda = (3/2)(2/(-1))^2 = 6, v_{0,4} = 8, bracket 4/3.
    assert b.w_bar == pytest.approx(6.0 * 64.0 * (1.0 + 1.0 / 3.0))
    assert b.v > 0 and b.w > 0 and b.w_bar > 0 and b.rho > 0
    lam = rc.derive(p).lambda_
    assert rc.rho_bound(p, 1e12) == pytest.approx(math.exp(3 * lam), rel=1e-6)


def test_bound_function_limits():
    p = ModelParams(A=0.2, R=1, S=1, U=1, V=0.5, eps=1e-6)
    d = rc.derive(p)
    for n in (1, 2):
        limit = n * d.varpi**2 / math.sqrt(2 * d.lambda_) * p.sigma1(rc.phi_star(0.7, p))
        assert rc.bound_functions(p, 0.7, n=n).v == pytest.approx(limit, rel=1e-4)
    # The lower flow in the denominator decreases with eps, so the prefactor grows with eps.
    rhos = [rc.rho_bound(p.with_(eps=e), 0.0) for e in (0.0, 0.2, 0.4)]
    assert rhos[0] <= rhos[1] <= rhos[2]
    assert rc.rho_bound(p, 0.0) >= rc.rho_bound(p, 0.7)
