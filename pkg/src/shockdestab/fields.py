"""Functions of the shock variable with analytic first derivatives.

Perturbations are stored as callables rather than samples, so that the
functionals can pick their own quadrature nodes.  Each function carries
the points where it loses smoothness; quadrature rules align panels with
them.
"""

import numpy as np


class ShockFunction:
    """A function f(y) with derivative f'(y) and a list of breakpoints."""

    def __init__(self, value, deriv, breakpoints=(), name=""):
        self._f = value
        self._d = deriv
        self.breakpoints = tuple(float(b) for b in breakpoints)
        self.name = name

    def __call__(self, y):
        return self._f(np.asarray(y, dtype=float))

    def d(self, y):
        return self._d(np.asarray(y, dtype=float))

    def _merge(self, other):
        return tuple(sorted(set(self.breakpoints) | set(other.breakpoints)))

    def __add__(self, other):
        return ShockFunction(lambda y: self(y) + other(y),
                             lambda y: self.d(y) + other.d(y),
                             self._merge(other))

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rmul__(self, c):
        c = float(c)
        return ShockFunction(lambda y: c * self(y), lambda y: c * self.d(y),
                             self.breakpoints, self.name)

    def __mul__(self, other):
        if isinstance(other, ShockFunction):
            return ShockFunction(lambda y: self(y) * other(y),
                                 lambda y: self.d(y) * other(y) + self(y) * other.d(y),
                                 self._merge(other))
        return other * self if np.isscalar(other) else NotImplemented

    def shifted(self, m):
        """y -> f(y - m)."""
        return ShockFunction(lambda y: self(y - m), lambda y: self.d(y - m),
                             [b + m for b in self.breakpoints], self.name)


def zero():
    return ShockFunction(np.zeros_like, np.zeros_like)


def constant(c):
    return ShockFunction(lambda y: np.full_like(y, c), np.zeros_like)


def smoothstep(t):
    """Cubic smoothstep 3t^2 - 2t^3 clamped to [0, 1], and its derivative."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t)


def _psi(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _dpsi(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def smooth_transition(t):
    """C-infinity step from 0 (t <= 0) to 1 (t >= 1), and its derivative."""
    t = np.asarray(t, dtype=float)
    a, b = _psi(t), _psi(1.0 - t)
    da, db = _dpsi(t), -_dpsi(1.0 - t)
    s = a + b
    return a / s, (da * s - a * (da + db)) / s ** 2


def bump(center, half_width, height=1.0):
    """C-infinity bump height * exp(1 - 1/(1 - z^2)), z = (y - center)/half_width."""
    c, r = float(center), float(half_width)

    def f(y):
        z = (y - c) / r
        out = np.zeros_like(z)
        m = np.abs(z) < 1.0
        out[m] = height * np.exp(1.0 - 1.0 / (1.0 - z[m] ** 2))
        return out

    def df(y):
        z = (y - c) / r
        out = np.zeros_like(z)
        m = np.abs(z) < 1.0
        zm = z[m]
        out[m] = height * np.exp(1.0 - 1.0 / (1.0 - zm ** 2)) * (-2.0 * zm / (1.0 - zm ** 2) ** 2) / r
        return out

    return ShockFunction(f, df, (c - r, c + r), "bump")


def collar_taper(lo, hi, delta):
    """C-infinity cutoff: 0 within delta/2 of either end, 1 beyond delta."""
    lo, hi, delta = float(lo), float(hi), float(delta)

    def parts(y):
        tl, dtl = smooth_transition((y - lo - delta / 2) / (delta / 2))
        tr, dtr = smooth_transition((hi - y - delta / 2) / (delta / 2))
        return tl, dtl * 2 / delta, tr, -dtr * 2 / delta

    def f(y):
        tl, _, tr, _ = parts(y)
        return tl * tr

    def df(y):
        tl, dtl, tr, dtr = parts(y)
        return dtl * tr + tl * dtr

    return ShockFunction(f, df, (lo + delta / 2, lo + delta, hi - delta, hi - delta / 2), "taper")


def _log_ramp(t, blend=0.1):
    """C^2 ramp from 0 to 1 on [0, 1], linear in the middle.

    Its derivative is a C^1 plateau, which keeps int ramp'^2 close to the
    optimal value 1 for a cutoff in logarithmic distance.
    """
    t = np.asarray(t, dtype=float)
    b = blend

    def prim(x):
        # antiderivative of the cubic smoothstep on [0, 1]
        x = np.clip(x, 0.0, 1.0)
        return x ** 3 - 0.5 * x ** 4

    raw = np.where(t < b, b * prim(t / b),
                   np.where(t <= 1.0 - b, 0.5 * b + (t - b),
                            (1.0 - b) - b * prim((1.0 - t) / b)))
    raw = np.where(t <= 0.0, 0.0, np.where(t >= 1.0, 1.0 - b, raw))
    slope = np.minimum(smoothstep(t / b)[0], smoothstep((1.0 - t) / b)[0])
    return raw / (1.0 - b), slope / (1.0 - b)


def log_collar_taper(lo, hi, outer, inner, ratio=np.e):
    """Cutoff vanishing within ``inner`` of either end and equal to 1 beyond ``outer``.

    The transition is linear in log-distance, so its weighted H1 cost
    against a weight vanishing linearly at the end points decays like
    1/log(outer/inner).  Breakpoints follow a geometric sequence so that
    composite rules grade towards the end points.
    """
    lo, hi, outer, inner = float(lo), float(hi), float(outer), float(inner)
    if not 0 < inner < outer:
        raise ValueError("need 0 < inner < outer")
    span = np.log(outer / inner)

    def side(d):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(d > inner, np.log(np.maximum(d, inner) / inner) / span, 0.0)
            r, dr = _log_ramp(t)
            dr = np.where(d > inner, dr / (span * np.maximum(d, inner)), 0.0)
        return r, dr

    def f(y):
        tl, _ = side(y - lo)
        tr, _ = side(hi - y)
        return tl * tr

    def df(y):
        tl, dtl = side(y - lo)
        tr, dtr = side(hi - y)
        return dtl * tr - tl * dtr

    n = int(np.ceil(span / np.log(ratio)))
    geo = inner * np.exp(np.linspace(0.0, span, n + 1))
    bps = [lo + d for d in geo] + [hi - d for d in geo]
    return ShockFunction(f, df, bps, "log-taper")
