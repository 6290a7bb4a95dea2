import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shockdestab.flux_catalog import (FLUXES, DegenerateShockError, DomainError, PressureLaw,
                                      get_flux, phi_theta, rankine_hugoniot_speed,
                                      superpoly_witness)


@pytest.fixture(params=sorted(FLUXES))
def flux(request):
    return get_flux(request.param)


def test_normalization(flux):
    assert flux.A(np.array(0.0)) == 0.0
    assert flux.dA(np.array(0.0)) == 0.0


def test_convex_on_dense_grid(flux):
    lo, hi = max(flux.interval[0], -100.0), min(flux.interval[1], 100.0)
    u = np.linspace(lo, hi, 10_000)
    assert np.all(flux.d2A(u) > flux.convexity_tol)
    assert flux.is_convex()


def test_derivatives_match_finite_differences(flux):
    u = np.linspace(-5.0, 3.0, 41)
    h = 1e-4
    for f, df in ((flux.A, flux.dA), (flux.dA, flux.d2A), (flux.d2A, flux.d3A)):
        fd = (f(u + h) - f(u - h)) / (2 * h)
        exact = df(u)
        ok = np.abs(exact) > 1e-3
        assert np.allclose(fd[ok], exact[ok], rtol=1e-6)


def test_relative_flux_against_direct_formula(flux):
    u = np.linspace(-3.0, 2.0, 17)
    v = np.linspace(-2.5, 1.5, 17)
    direct = flux.A(u) - flux.A(v) - flux.dA(v) * (u - v)
    assert np.allclose(flux.relative(u, v), direct, rtol=1e-10, atol=1e-14)


def test_entropy_flux_third_derivative():
    # G' = 2 u A'(u):  for Burgers G' = 2u^2 so G''' = 4
    b = get_flux("burgers")
    assert np.allclose(b.entropy_flux_d3(np.linspace(-3, 3, 7)), 4.0)
    e = get_flux("exponential")
    u = np.linspace(-2.0, 1.0, 9)
    h = 1e-3
    g1 = lambda x: 2 * x * e.dA(x)
    fd3 = (g1(u + h) - 2 * g1(u) + g1(u - h)) / h ** 2
    assert np.allclose(e.entropy_flux_d3(u), fd3, rtol=1e-5)


def test_exponential_domain_error():
    e = get_flux("exponential")
    with pytest.raises(DomainError):
        e.A(-81.0)
    with pytest.raises(DomainError):
        e.dA(np.array([0.0, 6.0]))


def test_unknown_flux():
    with pytest.raises(KeyError):
        get_flux("cubic")


def test_speed_burgers():
    b = get_flux("burgers")
    for K in (0.5, 2.0, 17.0):
        assert rankine_hugoniot_speed(b, 0.0, -K) == pytest.approx(-K / 2, rel=1e-15)


def test_speed_exponential():
    e = get_flux("exponential")
    assert rankine_hugoniot_speed(e, 0.0, -1.0) == pytest.approx(2.0 - np.e, rel=1e-14)
    assert rankine_hugoniot_speed(e, 0.0, -1.0) == pytest.approx(-0.71828, abs=1e-5)


def test_speed_degenerate():
    with pytest.raises(DegenerateShockError):
        rankine_hugoniot_speed(get_flux("burgers"), 0.0, 0.0)


def test_speed_domain():
    with pytest.raises(DomainError):
        rankine_hugoniot_speed(get_flux("exponential"), 0.0, -100.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-60, 4), st.floats(-60, 4))
def test_speed_symmetric(a, b):
    if abs(a - b) < 1e-6:
        return
    f = get_flux("exponential")
    assert rankine_hugoniot_speed(f, a, b) == pytest.approx(rankine_hugoniot_speed(f, b, a),
                                                            rel=1e-12)


def test_speed_negative_for_left_state_zero(flux):
    for K in (0.5, 3.0, 20.0):
        assert rankine_hugoniot_speed(flux, 0.0, -K) < 0


def test_sigma_over_slope_vanishes():
    e = get_flux("exponential")
    r = [abs(rankine_hugoniot_speed(e, 0.0, -K) / e.dA(np.array(-K))) for K in (5, 10, 20, 40)]
    assert all(b < a for a, b in zip(r, r[1:]))
    assert r[-1] < 0.03


def test_superpoly_witness_exponential():
    e = get_flux("exponential")
    x = superpoly_witness(e, 3, 10.0, -100.0)
    assert x is not None and x <= -20.0
    assert abs(e.dA(np.array(x))) >= 10.0 * abs(x) ** 3


def test_superpoly_witness_grid_oracle():
    # an independent scan for the most negative point beating 10 (1 + |x| + |x|^2 + |x|^3)
    e = get_flux("exponential")
    x = np.linspace(-80.0, 0.0, 20_001)[:-1]
    ok = np.expm1(-x) > 10 * (1 + np.abs(x) + x ** 2 + np.abs(x) ** 3)
    assert superpoly_witness(e, 3, 10.0, -100.0) == pytest.approx(x[ok][0])


def test_superpoly_witness_burgers_none():
    assert superpoly_witness(get_flux("burgers"), 2, 1.0, -1e6) is None


def test_superpoly_ratio_mode():
    e = get_flux("exponential")
    x = superpoly_witness(e, 0, 1.0, -1000.0, theta=0.9, target=100.0)
    assert x is not None
    assert phi_theta(e, x, 0.9) >= 100.0


def test_superpoly_arguments():
    e = get_flux("exponential")
    with pytest.raises(ValueError):
        superpoly_witness(e, -1, 1.0, -10.0)
    with pytest.raises(ValueError):
        superpoly_witness(e, 1, 1.0, 1.0)


# -- pressure law --------------------------------------------------------------------

@pytest.mark.parametrize("gamma", [1.4, 5.0 / 3.0, 2.0])
def test_pressure_signs(gamma):
    pr = PressureLaw(gamma)
    v = np.geomspace(1e-3, 1e3, 500)
    assert np.all(pr.dp(v) < 0)
    assert np.all(pr.d2p(v) > 0)


@pytest.mark.parametrize("gamma", [1.4, 5.0 / 3.0, 2.0])
def test_entropy_derivative_is_minus_pressure(gamma):
    pr = PressureLaw(gamma)
    v = np.geomspace(0.01, 10, 50)
    h = 1e-6 * v
    fd = (pr.Q(v + h) - pr.Q(v - h)) / (2 * h)
    assert np.allclose(fd, -pr.p(v), rtol=1e-8)


def test_pressure_derivatives_fd():
    pr = PressureLaw(5.0 / 3.0)
    v = np.geomspace(0.05, 5, 30)
    h = 1e-6 * v
    for f, df in ((pr.p, pr.dp), (pr.dp, pr.d2p), (pr.d2p, pr.d3p)):
        assert np.allclose((f(v + h) - f(v - h)) / (2 * h), df(v), rtol=1e-7)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 10.0), st.floats(-0.99, 3.0))
def test_relative_quantities_against_long_double(w, x):
    # closed forms in extended precision away from cancellation, series close to it
    pr = PressureLaw(5.0 / 3.0)
    v = w * (1 + x)
    g = np.longdouble(5) / 3
    V, W = np.longdouble(v), np.longdouble(w)
    Q = lambda s: s ** (1 - g) / (g - 1)
    p = lambda s: s ** (-g)
    exact_Q = Q(V) - Q(W) + p(W) * (V - W)
    exact_p = p(V) - p(W) + g * W ** (-g - 1) * (V - W)
    if abs(x) > 1e-3:
        assert pr.rel_Q(v, w) == pytest.approx(float(exact_Q), rel=1e-10, abs=1e-300)
        assert pr.rel_p(v, w) == pytest.approx(float(exact_p), rel=1e-10, abs=1e-300)
    assert pr.rel_Q(v, w) >= 0.0
    assert pr.rel_p(v, w) >= 0.0


def test_relative_quadratic_limit():
    # Q(v|w) ~ -p'(w) (v - w)^2 / 2 for v -> w
    pr = PressureLaw(5.0 / 3.0)
    w = np.array([0.01, 0.3, 1.0])
    d = 1e-9 * w
    assert np.allclose(pr.rel_Q(w + d, w), -pr.dp(w) * d ** 2 / 2, rtol=1e-8)
    assert np.allclose(pr.rel_p(w + d, w), pr.d2p(w) * d ** 2 / 2, rtol=1e-8)


def test_vacuum_raises():
    pr = PressureLaw(5.0 / 3.0)
    with pytest.raises(DomainError):
        pr.p(np.array([0.5, 0.0]))
    with pytest.raises(DomainError):
        pr.dp(-1.0)


def test_gamma_must_exceed_one():
    with pytest.raises(ValueError):
        PressureLaw(1.0)
