import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shockdestab.flux_catalog import PressureLaw, get_flux
from shockdestab.wave_profiles import (BranchError, NSShock, RangeError, ShockProfile,
                                       WindowTooSmallError, invert_profile, solve_ns_profile,
                                       solve_scalar_profile)


@pytest.fixture(scope="module")
def burgers2():
    return solve_scalar_profile(get_flux("burgers"), 2.0)


@pytest.fixture(scope="module")
def ns_gamma2():
    return solve_ns_profile(PressureLaw(2.0), 1.0, 0.0, 0.5)


def closed_form(x):
    return -2.0 / (1.0 + np.exp(-x))


def test_burgers_closed_form(burgers2):
    x = np.linspace(-40, 40, 8001)
    assert np.max(np.abs(burgers2.evaluate(x) - closed_form(x))) <= 1e-8
    grid = burgers2.x[np.abs(burgers2.x) <= 40]
    assert np.max(np.abs(burgers2.evaluate(grid) - closed_form(grid))) <= 1e-8


def test_burgers_slope_at_midpoint(burgers2):
    assert burgers2.derivative(np.array(0.0)) == pytest.approx(-0.5, abs=1e-12)


@pytest.mark.parametrize("name", ["burgers", "exponential", "quartic"])
def test_midpoint_normalization(name):
    prof = ShockProfile(get_flux(name), 2.0)
    assert prof.evaluate(np.array(0.0)) == -1.0


@pytest.mark.parametrize("name,K", [("burgers", 2.0), ("exponential", 5.0),
                                    ("exponential", 20.0), ("quartic", 3.0)])
def test_scalar_invariants(name, K):
    flux = get_flux(name)
    prof = ShockProfile(flux, K)
    assert np.all(np.diff(prof.values) < 0) or np.all(np.diff(prof.values) <= 0)
    interior = (prof.values > -K * (1 - 1e-12)) & (prof.values < -K * 1e-12)
    assert np.all(np.diff(prof.values[interior]) < 0)
    assert prof.ode_residual() <= 1e-8 * max(1.0, abs(float(flux.dA(-K))))
    assert abs(prof.values[0] - 0.0) <= prof.tau_tail
    assert abs(prof.values[-1] + K) <= prof.tau_tail


def test_window_too_small():
    with pytest.raises(WindowTooSmallError):
        ShockProfile(get_flux("burgers"), 2.0, half_width=1e-6)


def test_nonpositive_amplitude():
    with pytest.raises(ValueError):
        ShockProfile(get_flux("burgers"), -1.0)


def test_window_is_expanded_by_doubling():
    prof = ShockProfile(get_flux("burgers"), 2.0, half_width=3.0)
    assert prof.half_width == pytest.approx(3.0 * 2 ** 3)


def test_sampled_interpolant_order():
    # cubic-spline reconstruction from the samples converges at fourth order
    flux = get_flux("burgers")
    x = np.linspace(-3.3, 3.3, 301)
    exact = closed_form(x)
    errs = [np.max(np.abs(ShockProfile(flux, 2.0, spacing=h).sampled_interpolant()(x) - exact))
            for h in (0.05, 0.025)]
    order = np.log2(errs[0] / errs[1])
    assert order >= 3.9


def test_invert_normalization_point(burgers2):
    assert burgers2.invert(-1.0) == pytest.approx(0.0, abs=1e-12)


def test_invert_closed_form(burgers2):
    assert invert_profile(burgers2, -2.0 / (1.0 + np.e)) == pytest.approx(-1.0, abs=1e-6)


def test_invert_range(burgers2):
    with pytest.raises(RangeError):
        burgers2.invert(-2.0)
    with pytest.raises(RangeError):
        burgers2.invert(0.0)
    with pytest.raises(RangeError):
        burgers2.invert(0.5)


def test_invert_round_trip(burgers2):
    rng = np.random.default_rng(7)
    ys = -2.0 * rng.uniform(1e-6, 1 - 1e-6, 100)
    back = np.array([burgers2.evaluate(np.array(burgers2.invert(y))) for y in ys])
    assert np.max(np.abs(back - ys)) <= 1e-8


def test_invert_monotone(burgers2):
    ys = np.linspace(-1.999, -0.001, 60)
    xs = [burgers2.invert(y) for y in ys]
    assert np.all(np.diff(xs) < 0)


@pytest.mark.parametrize("m", [0.01, 0.1, 1.0])
def test_translate_inequality(burgers2, m):
    x, h = burgers2.x, burgers2.spacing
    diff = burgers2.evaluate(x) - burgers2.evaluate(x + m)
    lhs = np.sqrt(np.sum(diff ** 2) * h)
    rhs = np.sqrt(np.sum(burgers2.derivative(x) ** 2) * h) * abs(m)
    assert lhs <= rhs * (1 + 1e-3)


def test_csv_rows(burgers2):
    rows = burgers2.to_csv_rows()
    assert len(rows) == burgers2.x.size
    assert all(len(r) == 2 for r in rows[:5])


# -- transformed Navier-Stokes profile ------------------------------------------------

def test_ns_speed_and_state(ns_gamma2):
    assert ns_gamma2.sigma == pytest.approx(-np.sqrt(6.0), rel=1e-14)
    assert ns_gamma2.u_plus == pytest.approx(-np.sqrt(6.0) / 2, rel=1e-14)


def test_ns_rankine_hugoniot(ns_gamma2):
    r1, r2 = ns_gamma2.rankine_hugoniot_residuals()
    assert abs(r1) <= 1e-10 * abs(ns_gamma2.sigma)
    assert abs(r2) <= 1e-10 * abs(ns_gamma2.jump_p)


@pytest.mark.parametrize("gamma,vp", [(2.0, 0.5), (5.0 / 3.0, 0.2), (5.0 / 3.0, 0.05)])
def test_ns_invariants(gamma, vp):
    sh = solve_ns_profile(PressureLaw(gamma), 1.0, 0.3, vp)
    assert sh.sigma < 0
    v = sh.values
    inner = (v < 1 - 1e-12) & (v > vp * (1 + 1e-12))
    assert np.all(np.diff(v[inner]) < 0)
    scale = abs(float(sh.pressure.dp(vp))) * (1 - vp)
    assert abs(sh.q(np.array(1.0))) <= 1e-10 * scale
    assert abs(sh.q(np.array(vp))) <= 1e-10 * scale
    assert sh.ode_residual() <= 1e-8 * max(1.0, max(sh.end_rates()) * (1 - vp))
    assert sh.b(np.array(1.0)) == 0.0
    assert sh.b(np.array(vp)) == pytest.approx(1.0, rel=1e-14)
    h_direct = sh.u_minus + (sh.pressure.p(v) - sh.pressure.p(1.0)) / sh.sigma
    assert np.allclose(sh.h_values, h_direct, rtol=1e-10, atol=1e-12)
    assert abs(v[0] - 1.0) <= sh.tau_tail and abs(v[-1] - vp) <= sh.tau_tail


def test_ns_vacuum_and_branch_errors():
    pr = PressureLaw(5.0 / 3.0)
    with pytest.raises(BranchError):
        NSShock(pr, 1.0, 0.0, 1.5)
    with pytest.raises(BranchError):
        NSShock(pr, 1.0, 0.0, 1.0)
    with pytest.raises(BranchError):
        NSShock(pr, 1.0, 0.0, 0.0)
    with pytest.raises(BranchError):
        NSShock(pr, 1.0, 0.0, -0.2)


def test_ns_b_is_affine_in_pressure(ns_gamma2):
    v = ns_gamma2.values
    p = ns_gamma2.pressure.p
    ref = (p(v) - p(1.0)) / ns_gamma2.jump_p
    assert np.max(np.abs(ns_gamma2.b(v) - ref)) <= 1e-15


def test_ns_lazy_matches_eager():
    pr = PressureLaw(5.0 / 3.0)
    lazy = NSShock(pr, 1.0, 0.0, 0.1)
    eager = solve_ns_profile(pr, 1.0, 0.0, 0.1)
    x = np.linspace(-5, 5, 11)
    assert np.array_equal(lazy.evaluate(x), eager.evaluate(x))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.02, 0.98))
def test_ns_invert_round_trip(frac):
    sh = _ns_cache()
    y = sh.v_plus + frac * (sh.v_minus - sh.v_plus)
    assert sh.evaluate(np.array(sh.invert(y))) == pytest.approx(y, abs=1e-8)


_NS = {}


def _ns_cache():
    if "s" not in _NS:
        _NS["s"] = solve_ns_profile(PressureLaw(5.0 / 3.0), 1.0, 0.0, 0.2)
    return _NS["s"]
