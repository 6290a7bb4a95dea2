"""Shock-variable functionals for the transformed Navier-Stokes shock.

The state interval is y in [v+, v-] with y = v~(xi) the specific volume
of the profile.  The weight enters through a~(b(y)) where
b(y) = (p(y) - p(v-)) / [p] is the normalized pressure coordinate, and
[p] = p(v+) - p(v-) > 0.  A perturbation is a pair (w, g) added to
(v~, h~) as functions of y.  For the state sampled at xi - X the time
derivative of the weighted relative entropy equals

    -Xdot Ytilde + Btilde - Gtilde.

Integrals are evaluated with composite Simpson in log y, which keeps the
nodes dense near the vacuum end where p' is singular.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .fields import ShockFunction, bump, log_collar_taper, smooth_transition
from .flux_catalog import DomainError
from .quadrature import simpson_rule
from .scalar_destab import BracketError, DegeneratePhiError, TaperError
from .wave_profiles import NSShock

DEFAULT_PANELS = 2048
INNER_FLOOR = 1e-10


class IntervalError(ValueError):
    """The indicator interval [v+, 2 v+] does not fit below v-."""


def system_rule(shock, breakpoints=(), panels=DEFAULT_PANELS):
    """Simpson rule in t = log y on [v+, v-], returned as nodes/weights in y."""
    lo, hi = np.log(shock.v_plus), np.log(shock.v_minus)
    pts = [lo, hi] + [np.log(b) for b in breakpoints if shock.v_plus < b < shock.v_minus]
    t, qt = simpson_rule(pts, (hi - lo) / panels)
    y = np.exp(t)
    # pin the end nodes exactly
    y[0], y[-1] = shock.v_plus, shock.v_minus
    return y, qt * y


def _weights_on(weight, shock, y):
    b = shock.b(y)
    return weight(b), weight.prime(b), weight.second(b)


# -- core integrals on sampled perturbations -----------------------------

def _Yt(weight, shock, y, q, wv, gv):
    pr, jp, sig = shock.pressure, shock.jump_p, shock.sigma
    a0, a1, _ = _weights_on(weight, shock, y)
    dp = pr.dp(y)
    terms = {
        "relative_Q": np.sum(q * a1 * dp / jp * pr.rel_Q(wv + y, y)),
        "g_squared": np.sum(q * a1 * dp / jp * 0.5 * gv ** 2),
        "w_linear": np.sum(q * a0 * dp * wv),
        "g_linear": -np.sum(q * a0 * dp * gv) / sig,
    }
    terms = {k: float(v) for k, v in terms.items()}
    return sum(terms.values()), terms


def _Bt(weight, shock, y, q, wv):
    pr, jp, sig = shock.pressure, shock.jump_p, shock.sigma
    a0, a1, a2 = _weights_on(weight, shock, y)
    dp = pr.dp(y)
    jump = pr.p(wv + y) - pr.p(y)
    terms = {
        "slope_jump": -np.sum(q * a1 * dp * jump ** 2) / (2.0 * jp * sig),
        "relative_p": -sig * np.sum(q * a0 * pr.rel_p(wv + y, y)),
        "curvature_jump": -np.sum(q * a2 * dp ** 2 * shock.q(y) * jump ** 2) / (2.0 * jp ** 2),
        "speed_jump": -np.sum(q * a1 * (sig + dp / sig) * jump ** 2) / (2.0 * jp),
    }
    terms = {k: float(v) for k, v in terms.items()}
    return sum(terms.values()), terms


def _Gt(weight, shock, y, q, wv, wy, gv):
    pr, jp, sig = shock.pressure, shock.jump_p, shock.sigma
    a0, a1, _ = _weights_on(weight, shock, y)
    dp = pr.dp(y)
    dpw = pr.dp(wv + y)
    jump = pr.p(wv + y) - pr.p(y)
    terms = {
        "effective_velocity": -sig / (2.0 * jp) * np.sum(q * a1 * dp * (gv - jump / sig) ** 2),
        "relative_Q": -sig / jp * np.sum(q * a1 * dp * pr.rel_Q(wv + y, y)),
        "dissipation": -np.sum(q * a0 * (dpw * wy + dpw - dp) ** 2 * shock.q(y)),
    }
    terms = {k: float(v) for k, v in terms.items()}
    return sum(terms.values()), terms


def _Fs(weight, shock, y, q, wv, wy, gv):
    pr, jp, sig = shock.pressure, shock.jump_p, shock.sigma
    a0, a1, a2 = _weights_on(weight, shock, y)
    dp, d2p = pr.dp(y), pr.d2p(y)
    # (p' w)_y = p'' w + p' w_y
    dpw_y = d2p * wv + dp * wy
    qy = shock.q(y)
    j1_terms = {
        "slope": -sig / (2.0 * jp) * np.sum(q * a1 * dp ** 2 * wv ** 2),
        "dissipation": np.sum(q * a0 * dpw_y ** 2 * qy),
    }
    J2 = -0.5 * sig * np.sum(q * a0 * d2p * wv ** 2)
    j3_terms = {
        "cubic_slope": -np.sum(q * a1 * dp ** 3 * wv ** 2) / (2.0 * jp * sig),
        "curvature": -np.sum(q * a2 * dp ** 4 * qy * wv ** 2) / (2.0 * jp ** 2),
        "speed": -np.sum(q * a1 * (sig + dp / sig) * dp ** 2 * wv ** 2) / (2.0 * jp),
        "effective_velocity": sig / (2.0 * jp) * np.sum(q * a1 * dp * (gv - dp * wv / sig) ** 2),
    }
    j1_terms = {k: float(v) for k, v in j1_terms.items()}
    j3_terms = {k: float(v) for k, v in j3_terms.items()}
    J1, J3 = sum(j1_terms.values()), sum(j3_terms.values())
    return {"F": J1 + float(J2) + J3, "J1": J1, "J2": float(J2), "J3": J3,
            "J1_terms": j1_terms, "J3_terms": j3_terms}


# -- perturbations --------------------------------------------------------

@dataclass
class SystemPerturbation:
    """Pair (w, g) on [v+, v-] with its shift correction.

    The initial perturbation is (eps w + eps^2 lam phi, eps g).
    """

    shock: NSShock
    w: ShockFunction
    g: ShockFunction
    phi: ShockFunction
    alpha: float
    lam: float = 0.0
    eps: float = 1.0
    lam_star: float = 0.0
    smoothing: float = 0.0

    @property
    def total(self):
        return (self.eps * self.w + (self.eps ** 2 * self.lam) * self.phi,
                self.eps * self.g)

    @property
    def breakpoints(self):
        return (set(self.w.breakpoints) | set(self.g.breakpoints)
                | set(self.phi.breakpoints))


def _samples(shock, w, g, panels, extra=()):
    y, q = system_rule(shock, set(w.breakpoints) | set(g.breakpoints) | set(extra), panels)
    wv = w(y)
    if np.any(wv + y <= 0):
        raise DomainError("perturbed specific volume reaches vacuum")
    return y, q, wv, w.d(y), g(y)


def eval_Y_tilde(weight, shock, pert, panels=DEFAULT_PANELS, with_terms=False):
    """Shift coefficient Ytilde of the total perturbation."""
    w, g = pert.total
    y, q, wv, _, gv = _samples(shock, w, g, panels)
    val, terms = _Yt(weight, shock, y, q, wv, gv)
    return (val, terms) if with_terms else val


def eval_B_tilde(weight, shock, pert, panels=DEFAULT_PANELS):
    """Bad terms Btilde and their breakdown."""
    w, g = pert.total
    y, q, wv, _, _ = _samples(shock, w, g, panels)
    return _Bt(weight, shock, y, q, wv)


def eval_G_tilde(weight, shock, pert, panels=DEFAULT_PANELS):
    """Good terms Gtilde and their breakdown."""
    w, g = pert.total
    y, q, wv, wy, gv = _samples(shock, w, g, panels)
    return _Gt(weight, shock, y, q, wv, wy, gv)


def eval_F_system(weight, shock, pert, panels=DEFAULT_PANELS):
    """Quadratic form F = J1 + J2 + J3 of the base pair (w, g).

    Returns a dict with F, J1, J2, J3 and the per-term breakdowns.
    """
    y, q, wv, wy, gv = _samples(shock, pert.w, pert.g, panels)
    return _Fs(weight, shock, y, q, wv, wy, gv)


@dataclass
class SystemDecomposition:
    Y: float
    B: float
    G: float
    shift_rate: float
    terms: dict = field(default_factory=dict)

    @property
    def value(self):
        return -self.shift_rate * self.Y + self.B - self.G


def decompose_system_samples(weight, shock, y, q, wv, wy, gv, shift_rate=0.0):
    """Decomposition from sampled (w, w_y, g) on an arbitrary rule (y, q)."""
    Y, ty = _Yt(weight, shock, y, q, wv, gv)
    B, tb = _Bt(weight, shock, y, q, wv)
    G, tg = _Gt(weight, shock, y, q, wv, wy, gv)
    return SystemDecomposition(Y, B, G, float(shift_rate), {"Y": ty, "B": tb, "G": tg})


def system_derivative_formula(weight, shock, pert, shift_rate=0.0, panels=DEFAULT_PANELS):
    w, g = pert.total
    y, q, wv, wy, gv = _samples(shock, w, g, panels)
    return decompose_system_samples(weight, shock, y, q, wv, wy, gv, shift_rate).value


def smoothed_indicator(lo, hi, width):
    """1 on [lo, hi - width/2], smooth drop to 0 on [hi - width/2, hi + width/2]."""
    a = hi - 0.5 * width

    def f(y):
        s, _ = smooth_transition((y - a) / width)
        return 1.0 - s

    def df(y):
        _, ds = smooth_transition((y - a) / width)
        return -ds / width

    return ShockFunction(f, df, (a, a + width), "indicator")


def constraint_value(weight, shock, w, g, panels=DEFAULT_PANELS):
    """Linear shift constraint int a~ p' w - (1/sigma) int a~ p' g."""
    y, q = system_rule(shock, set(w.breakpoints) | set(g.breakpoints), panels)
    a0 = weight(shock.b(y))
    dp = shock.pressure.dp(y)
    return float(np.sum(q * a0 * dp * w(y)) - np.sum(q * a0 * dp * g(y)) / shock.sigma)


def constraint_scale(weight, shock, w, g, panels=DEFAULT_PANELS):
    y, q = system_rule(shock, set(w.breakpoints) | set(g.breakpoints), panels)
    a0 = weight(shock.b(y))
    dp = np.abs(shock.pressure.dp(y))
    return float(np.sum(q * a0 * dp * (np.abs(w(y)) + np.abs(g(y) / shock.sigma))))


def compute_alpha(weight, shock, smoothing=None, panels=DEFAULT_PANELS):
    """Indicator amplitude alpha that enforces the shift constraint for w = 1/p'.

    With ``smoothing`` None the sharp indicator of [v+, 2 v+] is used;
    otherwise the smoothed indicator of that width.  Returns alpha and
    the diagnostic |alpha| sqrt(p(v+)).
    """
    vp, vm = shock.v_plus, shock.v_minus
    edge = 2.0 * vp + (0.5 * smoothing if smoothing else 0.0)
    if edge >= vm:
        raise IntervalError("indicator interval [v+, 2 v+] must lie below v-")
    y, q = system_rule(shock, (2.0 * vp,), panels)
    num = shock.sigma * float(np.sum(q * weight(shock.b(y))))
    if smoothing:
        chi = smoothed_indicator(vp, 2.0 * vp, smoothing)
        y2, q2 = system_rule(shock, chi.breakpoints, panels)
        den = float(np.sum(q2 * weight(shock.b(y2)) * shock.pressure.dp(y2) * chi(y2)))
    else:
        lo, hi = np.log(vp), np.log(2.0 * vp)
        t, qt = simpson_rule([lo, hi], (hi - lo) / panels)
        y2 = np.exp(t)
        den = float(np.sum(qt * y2 * weight(shock.b(y2)) * shock.pressure.dp(y2)))
    alpha = num / den
    return alpha, abs(alpha) * float(np.sqrt(shock.pressure.p(vp)))


def default_system_phi(shock):
    """Interior bump centered in [v+, v-] with a quarter-width radius."""
    c = 0.5 * (shock.v_plus + shock.v_minus)
    return bump(c, 0.25 * (shock.v_minus - shock.v_plus))


def build_system_perturbation(weight, shock, smoothing_fraction=0.1, panels=DEFAULT_PANELS):
    """Default pair w = 1/p', g = alpha * (smoothed indicator of [v+, 2 v+])."""
    pr = shock.pressure
    width = smoothing_fraction * shock.v_plus
    alpha, _ = compute_alpha(weight, shock, width, panels)
    chi = smoothed_indicator(shock.v_plus, 2.0 * shock.v_plus, width)
    w = ShockFunction(lambda y: 1.0 / pr.dp(y), lambda y: -pr.d2p(y) / pr.dp(y) ** 2,
                      (), "inverse-slope")
    g = alpha * chi
    g.name = "indicator"
    return SystemPerturbation(shock, w, g, default_system_phi(shock), float(alpha),
                              smoothing=width)


def system_lambda_star(weight, shock, pert, panels=DEFAULT_PANELS):
    """Leading-order correction (int a~' p'^2 w^2 - int a~' p' g^2) / (2[p] int a~ p' phi)."""
    y, q = system_rule(shock, pert.breakpoints, panels)
    a0, a1, _ = _weights_on(weight, shock, y)
    dp, jp = shock.pressure.dp(y), shock.jump_p
    den = float(np.sum(q * a0 * dp * pert.phi(y)))
    if den == 0.0:
        raise DegeneratePhiError("weighted mass of phi vanishes")
    num = (np.sum(q * a1 * dp ** 2 * pert.w(y) ** 2)
           - np.sum(q * a1 * dp * pert.g(y) ** 2)) / (2.0 * jp)
    return float(num) / den


def solve_system_shift(weight, shock, base, eps, panels=DEFAULT_PANELS, tol=1e-14):
    """Root lam of Ytilde(eps (w, g) + (eps^2 lam phi, 0)) = 0 by bisection."""
    lam0 = system_lambda_star(weight, shock, base, panels)
    y, q = system_rule(shock, base.breakpoints, panels)
    wv, gv, ph = base.w(y), base.g(y), base.phi(y)

    def Yl(lam):
        tw = eps * wv + eps ** 2 * lam * ph
        if np.any(tw + y <= 0):
            raise DomainError("perturbed specific volume reaches vacuum")
        return _Yt(weight, shock, y, q, tw, eps * gv)[0]

    half = 0.5 * max(abs(lam0), 1.0)
    for _ in range(8):
        a, b = lam0 - half, lam0 + half
        fa, fb = Yl(a), Yl(b)
        if fa * fb <= 0:
            break
        half *= 4.0
    else:
        raise BracketError("system shift condition has no sign change near the linear guess")
    for _ in range(400):
        if b - a <= tol * max(1.0, abs(a)):
            break
        c = 0.5 * (a + b)
        fc = Yl(c)
        if fc == 0.0:
            a = b = c
            break
        if fa * fc < 0:
            b, fb = c, fc
        else:
            a, fa = c, fc
    lam = min((abs(Yl(x)), x) for x in (a, b, 0.5 * (a + b)))[1]
    return replace(base, lam=float(lam), eps=float(eps), lam_star=float(lam0))


def _log_taper(shock, delta, inner):
    """Cutoff in t = log y with collars of log-width delta at both ends."""
    lo, hi = np.log(shock.v_plus), np.log(shock.v_minus)
    base = log_collar_taper(lo, hi, delta, inner)
    return ShockFunction(lambda y: base(np.log(y)), lambda y: base.d(np.log(y)) / y,
                         [np.exp(b) for b in base.breakpoints], "log-taper")


def project_system_to_compact_support(weight, shock, pert, delta, inner=INNER_FLOOR,
                                      panels=DEFAULT_PANELS):
    """Taper both components near v+ and v- and restore the linear constraint.

    The cutoff works in t = log y: it vanishes within log-distance ``inner``
    of either end and equals one beyond ``delta``.  The constraint is
    restored by subtracting a multiple of (phi, 0).  Returns the projected
    perturbation and the constraint residual.
    """
    span = np.log(shock.v_minus / shock.v_plus)
    if not 0 < delta < span / 8:
        raise TaperError("taper width must lie in (0, log(v-/v+)/8)")
    if not 0 < inner < delta:
        raise TaperError("inner collar radius must lie in (0, delta)")
    taper = _log_taper(shock, delta, inner)
    w, g = pert.w * taper, pert.g * taper
    y, q = system_rule(shock, set(w.breakpoints) | set(g.breakpoints) | set(pert.phi.breakpoints),
                       panels)
    a0 = weight(shock.b(y))
    dp = shock.pressure.dp(y)
    f_tap = float(np.sum(q * a0 * dp * w(y)) - np.sum(q * a0 * dp * g(y)) / shock.sigma)
    f_phi = float(np.sum(q * a0 * dp * pert.phi(y)))
    w = w - (f_tap / f_phi) * pert.phi
    w.name, g.name = "projected", "projected"
    residual = float(np.sum(q * a0 * dp * w(y)) - np.sum(q * a0 * dp * g(y)) / shock.sigma)
    return replace(pert, w=w, g=g), residual


def eval_q_bound(shock, n=20_001):
    """max |q(y)| |p'(y)| / |sigma| on a log-spaced grid of [v+, v-]."""
    y = np.exp(np.linspace(np.log(shock.v_plus), np.log(shock.v_minus), n))
    ratio = np.abs(shock.q(y)) * np.abs(shock.pressure.dp(y)) / abs(shock.sigma)
    ratio[0] = ratio[-1] = 0.0
    return float(np.max(ratio))


@dataclass
class SweepRow:
    v_plus: float
    sigma: float = np.nan
    jump_p: float = np.nan
    alpha: float = np.nan
    J1: float = np.nan
    J2: float = np.nan
    J3: float = np.nan
    F: float = np.nan
    J1_normalized: float = np.nan
    J2_normalized: float = np.nan
    J3_normalized: float = np.nan
    alpha_normalized: float = np.nan
    q_ratio: float = np.nan
    error: str = ""

    @property
    def ok(self):
        return not self.error


@dataclass
class SweepReport:
    rows: list
    smallest_positive: Optional[float]

    @property
    def found(self):
        return self.smallest_positive is not None


def _sweep_cell(pressure, weight, v_minus, u_minus, vp, panels):
    row = SweepRow(float(vp))
    try:
        shock = NSShock(pressure, v_minus, u_minus, vp)
        pert = build_system_perturbation(weight, shock, panels=panels)
        Fd = eval_F_system(weight, shock, pert, panels)
        _, anorm = compute_alpha(weight, shock, pert.smoothing, panels)
        s, jp = abs(shock.sigma), shock.jump_p
        row.sigma, row.jump_p, row.alpha = shock.sigma, jp, pert.alpha
        row.J1, row.J2, row.J3, row.F = Fd["J1"], Fd["J2"], Fd["J3"], Fd["F"]
        row.J1_normalized = abs(Fd["J1"]) * jp / s
        row.J2_normalized = Fd["J2"] / s
        row.J3_normalized = abs(Fd["J3"]) * jp / s
        row.alpha_normalized = anorm
        row.q_ratio = eval_q_bound(shock)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def sweep_vplus(pressure, weight, v_minus, u_minus, v_plus_list, threads=1,
                panels=DEFAULT_PANELS):
    """Build shock, default pair and F for each v+; failures are recorded per cell.

    The verdict ``smallest_positive`` is the smallest v+ with F > 0.
    """
    cells = [float(v) for v in v_plus_list]
    run = lambda vp: _sweep_cell(pressure, weight, v_minus, u_minus, vp, panels)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(run, cells))
    else:
        rows = [run(vp) for vp in cells]
    pos = [r.v_plus for r in rows if r.ok and r.F > 0]
    return SweepReport(rows, min(pos) if pos else None)
