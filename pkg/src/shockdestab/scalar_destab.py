"""Scalar shock-variable functionals and the destabilizing perturbation.

All quantities are integrals over the state interval y in [-K, 0], where
y = S(x) is the shock variable.  The weight enters through
abar(y) = w(-y/K).  With u(x) = S(x) + w(S(x)) and the convention that
the functional samples the state at x - X, the time derivative of the
weighted relative entropy equals

    2 Xdot Y(w) + Z(w) + R1(w),

where Xdot is the shift rate measured against a profile held fixed in
the lab frame.  In the frame moving with the shock the rate is
Xdot + sigma; :func:`derivative_formula` takes the moving-frame rate.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .fields import ShockFunction, bump, log_collar_taper, smoothstep
from .flux_catalog import DomainError, rankine_hugoniot_speed
from .quadrature import segment_integral, simpson_rule


class ConstructionError(ValueError):
    """The base perturbation cannot be built with the admissible plateau."""


class DegeneratePhiError(ValueError):
    """The correction bump has zero weighted mass."""


class BracketError(RuntimeError):
    """No sign change of the shift condition near the linear guess."""


class TaperError(ValueError):
    """Collar width too large for the interval."""


DEFAULT_PANELS = 4096


def shock_rule(K, breakpoints=(), panels=DEFAULT_PANELS, grid=None):
    """Simpson nodes/weights on [-K, 0] aligned with the given breakpoints.

    ``grid`` may supply explicit (nodes, weights); it must cover [-K, 0].
    """
    if grid is not None:
        y, wq = grid
        if abs(np.min(y) + K) > 1e-12 * K or abs(np.max(y)) > 1e-12 * K:
            raise DomainError("quadrature grid does not cover [-K, 0]")
        return y, wq
    pts = [-K, 0.0] + [b for b in breakpoints if -K < b < 0.0]
    return simpson_rule(pts, K / panels)


def _abar(weight, K, y):
    s = -y / K
    return weight(s), -weight.prime(s) / K, weight.second(s) / K ** 2


def _speed(flux, K):
    return rankine_hugoniot_speed(flux, 0.0, -K)


def _sample(weight, K, w, panels, grid):
    y, q = shock_rule(K, w.breakpoints, panels, grid)
    return y, q, w(y), w.d(y)


def _Y(weight, K, y, q, wv, wy):
    ab = weight(-y / K)
    return float(np.sum(q * ab * wv * wy) + np.sum(q * ab * wv))


def _Z(weight, flux, K, y, q, wv, wy):
    sig = _speed(flux, K)
    s = -y / K
    a0, a1, a2 = weight(s), weight.prime(s), weight.second(s)
    m = -sig * y + flux.A(y)
    terms = {
        "linear": 2.0 * sig * np.sum(q * a0 * wv),
        "gradient": 2.0 * np.sum(q * a0 * wy ** 2 * m),
        "relative_flux": 2.0 * np.sum(q * a0 * flux.relative(wv + y, y)),
        "weight_curvature": -np.sum(q * a2 * wv ** 2 * m) / K ** 2,
        "weight_slope": np.sum(q * a1 * wv ** 2 * (-sig + 2.0 * flux.dA(y))) / K,
    }
    terms = {k: float(v) for k, v in terms.items()}
    return sum(terms.values()), terms


def _r1_density(flux, y, wv, n=20):
    def integrand(k):
        u = (wv + y)[..., None]
        return (flux.entropy_flux_d3(k) - 2.0 * y[..., None] * flux.d3A(k)) * (u - k) ** 2

    return segment_integral(integrand, y, y + wv, n)


def _R1(weight, flux, K, y, q, wv):
    a1 = weight.prime(-y / K)
    return float(np.sum(q * a1 * _r1_density(flux, y, wv))) / (2.0 * K)


def _F(weight, flux, K, y, q, wv, wy):
    sig = _speed(flux, K)
    s = -y / K
    a0, a1, a2 = weight(s), weight.prime(s), weight.second(s)
    m = -sig * y + flux.A(y)
    J1 = (np.sum(q * a0 * flux.d2A(y) * wv ** 2)
          + 2.0 / K * np.sum(q * a1 * (-sig + flux.dA(y)) * wv ** 2)
          - np.sum(q * a2 * m * wv ** 2) / K ** 2)
    J2 = 2.0 * np.sum(q * a0 * m * wy ** 2)
    return float(J1 + J2), float(J1), float(J2)


def eval_Y(weight, K, w, panels=DEFAULT_PANELS, grid=None):
    """Shift coefficient Y(w) = int abar w w_y dy + int abar w dy."""
    return _Y(weight, K, *_sample(weight, K, w, panels, grid))


def eval_Z(weight, flux, K, w, panels=DEFAULT_PANELS, grid=None):
    """Remainder-free part Z(w) of the time derivative and its five terms."""
    return _Z(weight, flux, K, *_sample(weight, K, w, panels, grid))


def eval_R1(weight, flux, K, w, panels=DEFAULT_PANELS, grid=None, with_bound=False):
    """Cubic remainder R1(w) from the entropy-flux Taylor expansion.

    The inner k-integral runs over [y, y + w(y)] with the remainder kernel
    (G'''(k) - 2 y A'''(k)) (w + y - k)^2.  With ``with_bound`` the
    explicit constant C of |R1| <= C sup|w|^3 is returned as well.
    """
    y, q, wv, _ = _sample(weight, K, w, panels, grid)
    val = _R1(weight, flux, K, y, q, wv)
    if not with_bound:
        return val
    wmax = float(np.max(np.abs(wv)))
    kk = np.linspace(-K - wmax, wmax, 2001)
    g3 = np.abs(flux.entropy_flux_d3(kk))
    a3 = np.abs(flux.d3A(kk))
    kernel = float(np.max(g3) + 2.0 * K * np.max(a3))
    const = weight.bounds["d1_sup"] * kernel / 6.0
    return val, const


def eval_F(weight, flux, K, w, panels=DEFAULT_PANELS, grid=None):
    """Quadratic form F = J1 + J2 of the leading-order derivative."""
    return _F(weight, flux, K, *_sample(weight, K, w, panels, grid))


@dataclass
class Decomposition:
    """Terms of the time derivative at one state and moving-frame shift rate."""

    Y: float
    Z: float
    R1: float
    shift_rate: float
    sigma: float
    Z_terms: dict = field(default_factory=dict)

    @property
    def value(self):
        return 2.0 * (self.shift_rate - self.sigma) * self.Y + self.Z + self.R1


def decompose_samples(weight, flux, K, y, q, wv, wy, shift_rate=0.0):
    """Decomposition from sampled perturbation values on an arbitrary rule (y, q)."""
    Z, terms = _Z(weight, flux, K, y, q, wv, wy)
    return Decomposition(_Y(weight, K, y, q, wv, wy), Z, _R1(weight, flux, K, y, q, wv),
                         float(shift_rate), _speed(flux, K), terms)


def derivative_formula(weight, flux, K, w, shift_rate=0.0, panels=DEFAULT_PANELS):
    """Time derivative of the weighted relative entropy for moving-frame rate ``shift_rate``."""
    y, q, wv, wy = _sample(weight, K, w, panels, None)
    return decompose_samples(weight, flux, K, y, q, wv, wy, shift_rate).value


def best_bounded_rate_derivative(weight, flux, K, w, rate_bound=1.0, panels=DEFAULT_PANELS):
    """Smallest derivative over constant moving-frame rates |rate| <= rate_bound.

    The derivative is affine in the rate, so the minimum sits at an end
    point chosen by the sign of Y.  Returns (value, rate).
    """
    y, q, wv, wy = _sample(weight, K, w, panels, None)
    d = decompose_samples(weight, flux, K, y, q, wv, wy, 0.0)
    rate = -rate_bound if d.Y > 0 else (rate_bound if d.Y < 0 else 0.0)
    d.shift_rate = rate
    return d.value, rate


@dataclass
class Perturbation:
    """Shock-variable perturbation with its shift correction.

    The initial perturbation is ``eps * base - eps**2 * lam * phi``.
    """

    K: float
    base: ShockFunction
    phi: ShockFunction
    C_w: float
    lam: float = 0.0
    eps: float = 1.0
    lam_star: float = 0.0

    @property
    def total(self):
        return self.eps * self.base - (self.eps ** 2 * self.lam) * self.phi

    def sample(self, y):
        t = self.total
        return t(y), t.d(y)


def default_phi(K):
    """C-infinity bump centered at -K/2 with half-width K/4."""
    return bump(-0.5 * K, 0.25 * K)


def _unit_profile(C):
    """w~ on [-1, 0]: 1, smoothstep ramp on [-1/2, -1/4], then -C."""

    def f(z):
        s, _ = smoothstep((z + 0.5) / 0.25)
        return 1.0 - (1.0 + C) * s

    def df(z):
        _, ds = smoothstep((z + 0.5) / 0.25)
        return -(1.0 + C) * ds / 0.25

    return f, df


def build_base_perturbation(weight, K, panels=DEFAULT_PANELS):
    """Base perturbation w(y) = w~(y/K) with the weighted mean-zero plateau constant."""
    s, q = simpson_rule([0.0, 0.25, 0.5, 1.0], 1.0 / panels)

    def constraint(C):
        f, _ = _unit_profile(C)
        return float(np.sum(q * weight(s) * f(-s)))

    lo = weight.inf / weight.sup
    hi = 3.0 * weight.sup / weight.inf
    if constraint(lo) * constraint(hi) > 0:
        raise ConstructionError("plateau constant outside the admissible range")
    C = brentq(constraint, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    f, df = _unit_profile(C)
    base = ShockFunction(lambda y: f(y / K), lambda y: df(y / K) / K,
                         (-0.5 * K, -0.25 * K), "base")
    return Perturbation(K=float(K), base=base, phi=default_phi(K), C_w=float(C))


def lambda_star(weight, K, w, phi, panels=DEFAULT_PANELS):
    """Linearized shift-correction coefficient int abar w w_y / int abar phi.

    For compactly supported w this equals -int (abar'/2) w^2 / int abar phi
    after integrating by parts; the unintegrated form also covers w with
    non-zero end values.
    """
    y, q = shock_rule(K, set(w.breakpoints) | set(phi.breakpoints), panels)
    ab = weight(-y / K)
    den = float(np.sum(q * ab * phi(y)))
    if den == 0.0:
        raise DegeneratePhiError("weighted mass of phi vanishes")
    return float(np.sum(q * ab * w(y) * w.d(y))) / den


def lambda_star_by_parts(weight, K, w, phi, panels=DEFAULT_PANELS):
    """The integrated-by-parts form -int (abar'/2) w^2 / int abar phi."""
    y, q = shock_rule(K, set(w.breakpoints) | set(phi.breakpoints), panels)
    a0, a1, _ = _abar(weight, K, y)
    den = float(np.sum(q * a0 * phi(y)))
    if den == 0.0:
        raise DegeneratePhiError("weighted mass of phi vanishes")
    return -float(np.sum(q * 0.5 * a1 * w(y) ** 2)) / den


def solve_shift_condition(weight, K, base, eps, panels=DEFAULT_PANELS, tol=1e-14):
    """Find lam with Y(eps w - eps^2 lam phi) = 0 by bracketed bisection."""
    w, phi = base.base, base.phi
    lam0 = lambda_star(weight, K, w, phi, panels)
    bps = set(w.breakpoints) | set(phi.breakpoints)
    y, q = shock_rule(K, bps, panels)

    def Y(lam):
        t = eps * w - (eps ** 2 * lam) * phi
        return eval_Y(weight, K, t, grid=(y, q))

    half = 0.5 * max(abs(lam0), 1.0)
    for _ in range(6):
        a, b = lam0 - half, lam0 + half
        fa, fb = Y(a), Y(b)
        if fa * fb <= 0:
            break
        half *= 4.0
    else:
        raise BracketError("shift condition has no sign change near the linear guess")
    if fa == 0.0:
        b = a
    for _ in range(400):
        if b - a <= tol * max(1.0, abs(a)):
            break
        c = 0.5 * (a + b)
        fc = Y(c)
        if fc == 0.0:
            a = b = c
            break
        if fa * fc < 0:
            b, fb = c, fc
        else:
            a, fa = c, fc
    lam = 0.5 * (a + b)
    # both end points satisfy the condition to round-off; keep the smaller residual
    cand = [(abs(Y(x)), x) for x in (a, b, lam)]
    lam = min(cand)[1]
    return replace(base, lam=float(lam), eps=float(eps), lam_star=float(lam0))


INNER_FLOOR = 1e-10


def project_to_compact_support(weight, K, w, delta, inner=None, panels=DEFAULT_PANELS):
    """Cut w off near both ends and restore the weighted mean-zero constraint.

    The cutoff vanishes within ``inner`` of either end point and equals one
    beyond ``delta``, ramping linearly in log-distance in between.  The
    default inner radius ``INNER_FLOOR * K`` keeps the collar resolvable in
    double precision.  The constraint int abar q = 0 is restored by
    subtracting f(q) x0, where x0 is an interior bump (kernel projection).
    Returns the projected ShockFunction and the constraint residual.
    """
    if not 0 < delta < K / 8:
        raise TaperError("taper width must lie in (0, K/8)")
    inner = INNER_FLOOR * K if inner is None else float(inner)
    if not 0 < inner < delta:
        raise TaperError("inner collar radius must lie in (0, delta)")
    taper = log_collar_taper(-K, 0.0, delta, inner)
    tapered = w * taper
    x0 = default_phi(K)
    bps = set(tapered.breakpoints) | set(x0.breakpoints)
    y, q = shock_rule(K, bps, panels)
    ab = weight(-y / K)
    fx0 = float(np.sum(q * ab * x0(y)))
    fq = float(np.sum(q * ab * tapered(y)))
    proj = tapered - (fq / fx0) * x0
    proj.name = "projected"
    residual = float(np.sum(q * ab * proj(y)))
    return proj, residual


def random_admissible_perturbation(weight, K, rng, eps=1e-3, n_bumps=3, panels=DEFAULT_PANELS):
    """eps times a random sum of interior bumps with weighted mean zero.

    Centers lie in [-0.8K, -0.2K] and half-widths in [0.05K, 0.15K], so the
    support stays inside (-K, 0); the weighted mean is removed with the
    default correction bump.
    """
    w = None
    for _ in range(n_bumps):
        c = -K * rng.uniform(0.2, 0.8)
        r = K * rng.uniform(0.05, 0.15)
        b = bump(c, r, float(rng.normal()))
        w = b if w is None else w + b
    phi = default_phi(K)
    y, q = shock_rule(K, set(w.breakpoints) | set(phi.breakpoints), panels)
    ab = weight(-y / K)
    w = w - (float(np.sum(q * ab * w(y))) / float(np.sum(q * ab * phi(y)))) * phi
    out = eps * w
    out.name = "random"
    return out


def rho_constant(weight):
    b = weight.bounds
    return min(0.9, b["inf"] / (48.0 * b["sup"]),
               3.0 / (200.0 * (1.0 + b["sup"] + b["d1_sup"])))


def rho_conditions(flux, K, rho, theta, n=2001):
    """Evaluate the four growth conditions that make the flux dominate at scale K."""
    dAK = float(flux.dA(-K))
    sig = _speed(flux, K)
    out = {}
    if theta is None:
        out["theta_condition"] = False
    else:
        dAt = float(flux.dA(-theta * K))
        out["theta_condition"] = bool(rho * dAK <= dAt < 0)
    out["speed_condition"] = bool(abs(sig / dAK) <= rho)
    yh = np.linspace(-K / 2, 0.0, n)
    out["slope_condition"] = bool(np.max(np.abs(flux.dA(yh))) <= rho * abs(dAK))
    yf = np.linspace(-K, 0.0, n)
    out["flux_condition"] = bool(np.max(np.abs(flux.A(yf))) <= rho * K * abs(dAK))
    return out


@dataclass
class KScanRow:
    K: float
    sigma: float
    dA_minus_K: float
    J1: float
    J2: float
    F: float
    target: float
    conditions: dict

    @property
    def passes(self):
        return self.F >= self.target


@dataclass
class KSearchReport:
    K_star: Optional[float]
    first_positive: Optional[float]
    sign_changes: list
    rows: list
    rho: float
    theta: Optional[float]
    conditions_at_K_star: Optional[dict] = None

    @property
    def found(self):
        return self.K_star is not None


def _scan_cell(flux, weight, K, rho, theta, panels):
    pert = build_base_perturbation(weight, K, panels)
    F, J1, J2 = eval_F(weight, flux, K, pert.base, panels)
    dAK = float(flux.dA(-K))
    target = weight(np.array(1.0)).item() * abs(dAK) / 8.0
    return KScanRow(K, _speed(flux, K), dAK, J1, J2, F, target,
                    rho_conditions(flux, K, rho, theta))


def k_grid(K0, K_max, ratio=1.25):
    ks = []
    K = float(K0)
    while K <= K_max * (1 + 1e-12):
        ks.append(K)
        K *= ratio
    return ks


def search_destabilizing_K(flux, weight, K0, K_max, ratio=1.25, threads=1,
                           panels=DEFAULT_PANELS):
    """Geometric scan of K for a positive quadratic form.

    K_star is the smallest scanned K with F >= w(1)|A'(-K)|/8, the
    lower bound the construction guarantees; ``first_positive`` is the
    smallest K with F > 0.  All sign changes of F are reported.
    """
    if not K0 > 0:
        raise ValueError("K0 must be positive")
    rho = rho_constant(weight)
    theta = weight.theta()
    ks = [K for K in k_grid(K0, K_max, ratio) if -K >= flux.interval[0]]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(lambda K: _scan_cell(flux, weight, K, rho, theta, panels), ks))
    else:
        rows = [_scan_cell(flux, weight, K, rho, theta, panels) for K in ks]
    K_star = next((r.K for r in rows if r.passes), None)
    first_pos = next((r.K for r in rows if r.F > 0), None)
    changes = [rows[i + 1].K for i in range(len(rows) - 1)
               if np.sign(rows[i].F) != np.sign(rows[i + 1].F)]
    cond = next((r.conditions for r in rows if r.K == K_star), None)
    return KSearchReport(K_star, first_pos, changes, rows, rho, theta, cond)
