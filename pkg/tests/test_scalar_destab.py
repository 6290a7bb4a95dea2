import numpy as np
import pytest
from scipy.integrate import quad

from shockdestab import scalar_destab as sd
from shockdestab.fields import ShockFunction, bump, constant, zero
from shockdestab.flux_catalog import DomainError, get_flux
from shockdestab.weights import Weight, affine_weight, bump_weight, constant_weight

# K* of the default exponential scan (K0 = 1, ratio 1.25): 1.25**16
K_STAR = 1.25 ** 16


@pytest.fixture(scope="module")
def expo():
    return get_flux("exponential")


@pytest.fixture(scope="module")
def burgers():
    return get_flux("burgers")


def wobbly_weight():
    # a generator with nonzero first and second derivatives everywhere
    return Weight("wobbly",
                  lambda s: 1 + 0.5 * s + 0.3 * np.sin(3 * s),
                  lambda s: 0.5 + 0.9 * np.cos(3 * s),
                  lambda s: -2.7 * np.sin(3 * s))


def sine(K, amp=1.0):
    k = 2 * np.pi / K
    return ShockFunction(lambda y: amp * np.sin(k * y), lambda y: amp * k * np.cos(k * y))


# -- Y ------------------------------------------------------------------------------

def test_Y_sine_vanishes():
    K = 3.0
    assert abs(sd.eval_Y(constant_weight(), K, sine(K))) <= 1e-13


def test_Y_telescopes_for_zero_mean_compact():
    K = 4.0
    w = bump(-1.0, 0.5, 0.7) - bump(-3.0, 0.5, 0.7)
    assert abs(sd.eval_Y(constant_weight(), K, w)) <= 1e-13


def test_Y_refined_quadrature():
    K = 6.0
    wt = affine_weight(0.5)
    base = sd.build_base_perturbation(wt, K).base
    coarse, fine = sd.eval_Y(wt, K, base), sd.eval_Y(wt, K, base, panels=20_480)
    assert coarse == pytest.approx(fine, rel=1e-8)


def test_grid_must_cover_interval():
    y = np.linspace(-1.0, 0.0, 11)
    with pytest.raises(DomainError):
        sd.eval_Y(constant_weight(), 2.0, sine(2.0), grid=(y, np.full(11, 0.1)))


# -- Z --------------------------------------------------------------------------------

def test_Z_zero(expo):
    val, terms = sd.eval_Z(bump_weight(), expo, 5.0, zero())
    assert val == 0.0 and all(v == 0.0 for v in terms.values())
    assert len(terms) == 5


def test_Z_burgers_closed_form(burgers):
    K = 2.0
    pert = sd.build_base_perturbation(constant_weight(), K)
    w = pert.base
    sig = -K / 2
    f = lambda y: (2 * sig * w(y) + 2 * w.d(y) ** 2 * (-sig * y + y * y / 2)
                   + w(y) ** 2)
    exact = quad(f, -K, 0, points=[-K / 2, -K / 4], epsabs=0, epsrel=1e-13, limit=200)[0]
    val, _ = sd.eval_Z(constant_weight(), burgers, K, w)
    assert val == pytest.approx(exact, rel=1e-10)


def test_Z_refined_quadrature(expo):
    wt = affine_weight(0.5)
    base = sd.build_base_perturbation(wt, K_STAR).base
    coarse = sd.eval_Z(wt, expo, K_STAR, base)[0]
    fine = sd.eval_Z(wt, expo, K_STAR, base, panels=20_480)[0]
    assert coarse == pytest.approx(fine, rel=1e-8)


# -- R1 -------------------------------------------------------------------------------

def test_R1_zero(expo, burgers):
    assert sd.eval_R1(affine_weight(0.5), expo, 5.0, zero()) == 0.0
    K = 3.0
    base = sd.build_base_perturbation(constant_weight(), K).base
    assert sd.eval_R1(constant_weight(), burgers, K, 0.1 * base) == 0.0
    assert sd.eval_R1(constant_weight(), expo, K, 0.1 * base) == 0.0


def test_R1_burgers_kernel(burgers):
    # A''' = 0 and G''' = 4 for Burgers, so the inner integral is 4 w^3 / 3
    K = 3.0
    wt = affine_weight(0.5)
    w = 0.1 * sd.build_base_perturbation(wt, K).base
    exact = quad(lambda y: 0.5 * 4 * float(w(np.array(y))) ** 3 / 3 / (2 * K), -K, 0,
                 points=[-K / 2, -K / 4], epsabs=0, epsrel=1e-13)[0]
    assert sd.eval_R1(wt, burgers, K, w) == pytest.approx(exact, rel=1e-10)


def test_R1_cubic_scaling(expo):
    K = 5.0
    wt = affine_weight(0.5)
    base = sd.build_base_perturbation(wt, K).base
    r = [sd.eval_R1(wt, expo, K, e * base) for e in (1e-2, 1e-3)]
    assert r[0] / 1e-6 == pytest.approx(r[1] / 1e-9, rel=1e-2)
    assert np.log10(r[0] / r[1]) == pytest.approx(3.0, abs=0.05)


def test_R1_against_nested_quad(expo):
    K, eps = 3.0, 0.2
    wt = wobbly_weight()
    w = eps * sd.build_base_perturbation(wt, K).base
    g3 = lambda k: 4 * np.exp(-k) - 2 * k * np.exp(-k)

    def outer(y):
        W = float(w(np.array(y)))
        inner = quad(lambda k: (g3(k) + 2 * y * np.exp(-k)) * (W + y - k) ** 2, y, y + W)[0]
        return wt.prime(np.array(-y / K)) * inner / (2 * K)

    exact = quad(outer, -K, 0, points=[-K / 2, -K / 4], limit=200)[0]
    assert sd.eval_R1(wt, expo, K, w) == pytest.approx(exact, rel=1e-8)


def test_R1_bound(expo):
    K = 4.0
    wt = bump_weight()
    w = 0.05 * sd.build_base_perturbation(wt, K).base
    val, C = sd.eval_R1(wt, expo, K, w, with_bound=True)
    sup = np.max(np.abs(w(np.linspace(-K, 0, 4001))))
    assert abs(val) <= C * sup ** 3


# -- F --------------------------------------------------------------------------------

def test_F_constant_w_has_no_gradient_term(expo):
    F, J1, J2 = sd.eval_F(affine_weight(0.5), expo, 4.0, constant(0.3))
    assert J2 == 0.0 and F == J1


@pytest.mark.parametrize("K", [2.0, 10.0, 50.0])
def test_F_burgers_negative(burgers, K):
    base = sd.build_base_perturbation(constant_weight(), K).base
    assert sd.eval_F(constant_weight(), burgers, K, base)[0] < 0


def test_F_exponential_lower_bound(expo):
    wt = constant_weight()
    base = sd.build_base_perturbation(wt, K_STAR).base
    F, J1, J2 = sd.eval_F(wt, expo, K_STAR, base)
    dA = abs(float(expo.dA(np.array(-K_STAR))))
    assert F >= dA / 8
    assert J1 >= dA / 4


def test_J2_lower_bound(expo):
    wt = constant_weight()
    rho = sd.rho_constant(wt)
    base = sd.build_base_perturbation(wt, K_STAR).base
    _, _, J2 = sd.eval_F(wt, expo, K_STAR, base)
    dA = abs(float(expo.dA(np.array(-K_STAR))))
    # |w_y| <= (1 + C_w) * 1.5 / (K / 4) and |-sigma y + A| <= 2 rho K |A'(-K)|
    # on the ramp of length K / 4
    C = 2 * 2 * (1 + 3) ** 2 * 1.5 ** 2 * 4 * wt.sup
    assert J2 >= -C * rho * dA


# -- base perturbation ------------------------------------------------------------------

@pytest.mark.parametrize("weight", [constant_weight(), affine_weight(0.5), affine_weight(-0.5),
                                    bump_weight()])
def test_base_perturbation_invariants(weight):
    K = 7.0
    pert = sd.build_base_perturbation(weight, K)
    w = pert.base
    y = np.linspace(-K, 0, 20_001)
    v = w(y)
    assert np.all(np.diff(v) <= 0)
    assert np.all(v[y <= -K / 2] == 1.0)
    assert np.allclose(v[y >= -K / 4], -pert.C_w, rtol=0, atol=1e-15)
    assert weight.inf / weight.sup <= pert.C_w <= 3 * weight.sup / weight.inf
    yq, q = sd.shock_rule(K, w.breakpoints)
    resid = np.sum(q * weight(-yq / K) * w(yq))
    assert abs(resid) <= 1e-12 * K * weight.sup
    # independent adaptive quadrature of the unit constraint
    f = lambda s: float(weight(np.array(s)) * w(np.array(-s * K)))
    unit = sum(quad(f, a, b, epsabs=1e-15, epsrel=1e-13)[0]
               for a, b in ((0, 0.25), (0.25, 0.5), (0.5, 1)))
    assert abs(unit) <= 1e-12


def test_base_constant_weight_in_range():
    assert 1.0 <= sd.build_base_perturbation(constant_weight(), 3.0).C_w <= 3.0


def test_phi_has_weighted_mass():
    K = 5.0
    phi = sd.default_phi(K)
    y = np.linspace(-K, 0, 1001)
    assert phi(y)[0] == 0.0 and phi(y)[-1] == 0.0
    yq, q = sd.shock_rule(K, phi.breakpoints)
    assert np.sum(q * phi(yq)) > 0


# -- shift condition --------------------------------------------------------------------

def test_lambda_star_constant_weight_compact():
    # compact support: the integrated form applies and a' = 0 gives zero
    K = 4.0
    wt = constant_weight()
    w = bump(-1.0, 0.5, 0.7) - bump(-3.0, 0.5, 0.7)
    assert abs(sd.lambda_star(wt, K, w, sd.default_phi(K))) <= 1e-14
    base = sd.build_base_perturbation(wt, K)
    assert sd.lambda_star_by_parts(wt, K, base.base, base.phi) == 0.0


def test_lambda_star_forms_agree_for_compact_support():
    K = 4.0
    wt = affine_weight(0.5)
    w = bump(-1.0, 0.5, 0.7) + bump(-2.6, 0.8, -0.3)
    phi = sd.default_phi(K)
    assert sd.lambda_star(wt, K, w, phi) == pytest.approx(
        sd.lambda_star_by_parts(wt, K, w, phi), rel=1e-10)


def test_lambda_star_affine_direct_formula():
    # abar' = -c/K for the affine generator, so lam* = (c/(2K)) int w^2 / int abar phi
    K, c = 4.0, 0.5
    wt = affine_weight(c)
    w = bump(-1.0, 0.5, 0.7) + bump(-2.6, 0.8, -0.3)
    phi = sd.default_phi(K)
    num = quad(lambda y: float(w(np.array(y))) ** 2, -K, 0, points=[-3.4, -1.5, -0.5], limit=200)[0]
    den = quad(lambda y: (1 - c * y / K) * float(phi(np.array(y))), -K, 0, limit=200)[0]
    assert sd.lambda_star(wt, K, w, phi) == pytest.approx(c / (2 * K) * num / den, rel=1e-9)


def test_shift_condition_zero_for_constant_weight_compact():
    K = 4.0
    wt = constant_weight()
    w0 = bump(-1.0, 0.5, 0.7) - bump(-3.0, 0.5, 0.7)
    pert = sd.Perturbation(K, w0, sd.default_phi(K), 1.0)
    sol = sd.solve_shift_condition(wt, K, pert, 1e-3)
    assert abs(sol.lam) <= 1e-10


def _shift_scale(wt, K, pert):
    y = np.linspace(-K, 0, 4001)
    return K * wt.sup * np.max(np.abs(pert.total(y))) ** 2


@pytest.mark.parametrize("weight", [affine_weight(0.5), bump_weight()])
def test_shift_condition_root_and_limit(weight):
    K = 6.0
    base = sd.build_base_perturbation(weight, K)
    errs = []
    for eps in (1e-2, 1e-3, 1e-4):
        sol = sd.solve_shift_condition(weight, K, base, eps)
        assert abs(sd.eval_Y(weight, K, sol.total)) <= 1e-12 * _shift_scale(weight, K, sol)
        errs.append(abs(sol.lam - sol.lam_star))
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] <= 0.1 * max(abs(sol.lam_star), 1e-8)


def test_degenerate_phi():
    K = 4.0
    phi = bump(-1.0, 0.5) - bump(-3.0, 0.5)
    with pytest.raises(sd.DegeneratePhiError):
        sd.lambda_star(constant_weight(), K, sine(K), phi)


# -- compact-support projection --------------------------------------------------------

def test_projection(expo):
    K = K_STAR
    wt = constant_weight()
    base = sd.build_base_perturbation(wt, K).base
    F0 = sd.eval_F(wt, expo, K, base)[0]
    Fs = []
    for d in (K / 16, K / 32, K / 64):
        q, resid = sd.project_to_compact_support(wt, K, base, d)
        inner = sd.INNER_FLOOR * K
        assert abs(resid) <= 1e-12 * K * wt.sup
        ends = np.concatenate([np.linspace(-K, -K + inner, 50), np.linspace(-inner, 0, 50)])
        assert np.all(q(ends) == 0.0)
        assert np.all(q.d(ends) == 0.0)
        mid = np.linspace(-K + d, -d, 501)
        phi_part = sd.default_phi(K)(mid)
        # unchanged away from the collars up to the multiple of the correction bump
        off = phi_part == 0
        assert np.allclose(q(mid)[off], base(mid)[off], rtol=0, atol=1e-15)
        Fs.append(sd.eval_F(wt, expo, K, q)[0])
    assert Fs[0] < Fs[1] < Fs[2] <= F0 * (1 + 1e-12)


def test_projection_taper_limits():
    K = 4.0
    base = sd.build_base_perturbation(constant_weight(), K).base
    with pytest.raises(sd.TaperError):
        sd.project_to_compact_support(constant_weight(), K, base, K / 8)
    with pytest.raises(sd.TaperError):
        sd.project_to_compact_support(constant_weight(), K, base, 0.1, inner=0.2)


# -- epsilon expansion ------------------------------------------------------------------

def test_epsilon_expansion(expo):
    # the expansion holds for compactly supported w, where the shift
    # condition turns the linear term of Z into part of J1
    K = 5.0
    wt = affine_weight(0.5)
    base = sd.build_base_perturbation(wt, K)
    q, _ = sd.project_to_compact_support(wt, K, base.base, K / 16)
    base = sd.Perturbation(K, q, base.phi, base.C_w)
    F = sd.eval_F(wt, expo, K, q)[0]
    c = []
    for eps in (1e-2, 1e-3):
        sol = sd.solve_shift_condition(wt, K, base, eps)
        Z = sd.eval_Z(wt, expo, K, sol.total)[0]
        R1 = sd.eval_R1(wt, expo, K, sol.total)
        c.append(abs(Z + R1 - eps ** 2 * F) / eps ** 2)
    assert c[1] < c[0]
    assert c[1] <= 1e-2 * abs(F)


def test_decomposition_against_direct_derivative(expo):
    # time derivative of int abar w^2 dy computed directly from the moving-frame
    # equation in shock variables, with finite-difference derivatives of w
    K, eps = 3.0, 0.3
    wt = wobbly_weight()
    A, A1 = expo.A, expo.dA
    sig = -float(A(np.array(-K))) / K
    c, r = -K / 2, K / 2.2
    w = bump(c, r, eps)
    h = 1e-4

    def direct(y):
        y = np.array(y)
        m, my = sig * y - A(y), sig - A1(y)
        W = w(y)
        wy = (w(y + h) - w(y - h)) / (2 * h)
        wyy = (w(y + h) - 2 * W + w(y - h)) / h ** 2
        ab = wt(-y / K)
        return float(2 * ab * W * ((wyy * m + wy * my) - sig * wy + A1(y + W) * (1 + wy) - A1(y)))

    D = quad(direct, c - r, c + r, limit=400, points=[c])[0]
    y, q = sd.shock_rule(K, w.breakpoints, panels=8192)
    dec = sd.decompose_samples(wt, expo, K, y, q, w(y), w.d(y), shift_rate=0.0)
    assert dec.value == pytest.approx(D, rel=1e-6)


# -- best bounded rate / Burgers control ------------------------------------------------

def test_best_rate_derivative_burgers_random(burgers):
    rng = np.random.default_rng(2024)
    wt = constant_weight()
    for K in (1.0, 2.0, 5.0):
        w = sd.random_admissible_perturbation(wt, K, rng)
        val, rate = sd.best_bounded_rate_derivative(wt, burgers, K, w)
        assert val <= 1e-8
        assert abs(rate) <= 1.0


def test_random_perturbation_admissible():
    rng = np.random.default_rng(3)
    K = 4.0
    wt = affine_weight(0.5)
    w = sd.random_admissible_perturbation(wt, K, rng)
    y, q = sd.shock_rule(K, w.breakpoints)
    assert abs(np.sum(q * wt(-y / K) * w(y))) <= 1e-15 * K
    assert w(np.array([-K, 0.0])).tolist() == [0.0, 0.0]


# -- K search -----------------------------------------------------------------------------

def test_k_grid():
    ks = sd.k_grid(1.0, 10.0)
    assert ks[0] == 1.0 and ks[-1] <= 10.0
    assert np.allclose(np.diff(np.log(ks)), np.log(1.25))


def test_search_burgers_not_found(burgers):
    rep = sd.search_destabilizing_K(burgers, constant_weight(), 1.0, 1e3)
    assert not rep.found
    assert rep.first_positive is None
    assert all(r.F < 0 for r in rep.rows)


def test_search_exponential(expo):
    rep = sd.search_destabilizing_K(expo, constant_weight(), 1.0, 80.0, threads=2)
    assert rep.found
    assert rep.K_star == pytest.approx(K_STAR)
    row = next(r for r in rep.rows if r.K == rep.K_star)
    assert row.F >= abs(row.dA_minus_K) / 8
    assert rep.first_positive <= rep.K_star
    # once the speed condition holds it keeps holding
    flags = [r.conditions["speed_condition"] for r in rep.rows]
    assert flags == sorted(flags)
    # rows are independent of threading
    serial = sd.search_destabilizing_K(expo, constant_weight(), 1.0, 80.0)
    assert [r.F for r in serial.rows] == [r.F for r in rep.rows]


def test_rho_constant():
    assert sd.rho_constant(constant_weight()) == pytest.approx(min(0.9, 1 / 48, 3 / 400))
    w = affine_weight(0.5)
    assert sd.rho_constant(w) == pytest.approx(min(1 / 72, 3 / (200 * 3.0)))


def test_search_requires_positive_start(expo):
    with pytest.raises(ValueError):
        sd.search_destabilizing_K(expo, constant_weight(), 0.0, 10.0)
