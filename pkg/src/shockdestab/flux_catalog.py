"""Scalar fluxes and the barotropic pressure law.

A flux is a strictly convex function A with A(0) = A'(0) = 0 together
with its first three derivatives.  Every evaluator checks that its
argument lies in the declared interval, so that an exponential flux
raises instead of silently overflowing.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .quadrature import gauss_legendre_unit


class DomainError(ValueError):
    """Argument outside the declared interval of a flux or pressure law."""


class DegenerateShockError(ValueError):
    """End states coincide, so no shock connects them."""


def _check(u, lo, hi, name):
    arr = np.asarray(u, dtype=float)
    if arr.size and (np.nanmin(arr) < lo or np.nanmax(arr) > hi):
        raise DomainError(
            f"{name}: argument outside [{lo}, {hi}] "
            f"(got range [{np.nanmin(arr)}, {np.nanmax(arr)}])")
    return arr


@dataclass(frozen=True)
class FluxFunction:
    """Strictly convex scalar flux with derivatives up to third order.

    Attributes
    ----------
    name : str
        Catalog identifier.
    f, d1, d2, d3 : callable
        Vectorized evaluators of A, A', A'', A'''.
    interval : tuple of float
        Declared domain [lo, hi].
    convexity_tol : float
        Positivity threshold used when certifying A'' > 0 by sampling.
    """

    name: str
    f: Callable
    d1: Callable
    d2: Callable
    d3: Callable
    interval: tuple
    convexity_tol: float = 1e-12

    def _arg(self, u):
        return _check(u, self.interval[0], self.interval[1], self.name)

    def A(self, u):
        return self.f(self._arg(u))

    def dA(self, u):
        return self.d1(self._arg(u))

    def d2A(self, u):
        return self.d2(self._arg(u))

    def d3A(self, u):
        return self.d3(self._arg(u))

    def relative(self, u, v, n=16):
        """Relative flux A(u|v) = A(u) - A(v) - A'(v)(u - v).

        Evaluated through the integral form (u - v)^2 int_0^1 A''(v + s(u - v))(1 - s) ds,
        which avoids the cancellation of the direct formula for u close to v.
        """
        u = self._arg(u)
        return self.relative_offset(v, u - self._arg(v), n)

    def relative_offset(self, v, d, n=16):
        """A(v + d | v) from the base point and the offset, without forming v + d."""
        v = self._arg(v)
        d = np.asarray(d, dtype=float)
        t, w = gauss_legendre_unit(n)
        k = v[..., None] + d[..., None] * t
        return d ** 2 * np.sum(self.d2(k) * (1.0 - t) * w, axis=-1)

    def entropy_flux_d3(self, u):
        """Third derivative of the entropy flux G with G' = 2 u A'(u)."""
        u = self._arg(u)
        return 4.0 * self.d2(u) + 2.0 * u * self.d3(u)

    def is_convex(self, n=10_000):
        lo, hi = self.interval
        lo = max(lo, -1e6)
        hi = min(hi, 1e6)
        u = np.linspace(lo, hi, n)
        return bool(np.all(self.d2(u) > self.convexity_tol))


def exponential_flux():
    """A(u) = exp(-u) + u - 1 on [-80, 5]."""
    return FluxFunction(
        "exponential",
        lambda u: np.expm1(-u) + u,
        lambda u: -np.expm1(-u),
        lambda u: np.exp(-u),
        lambda u: -np.exp(-u),
        (-80.0, 5.0),
    )


def burgers_flux():
    """A(u) = u^2 / 2."""
    return FluxFunction(
        "burgers",
        lambda u: 0.5 * u * u,
        lambda u: np.asarray(u, dtype=float) * 1.0,
        lambda u: np.ones_like(np.asarray(u, dtype=float)),
        lambda u: np.zeros_like(np.asarray(u, dtype=float)),
        (-1e8, 1e8),
    )


def quartic_flux():
    """A(u) = u^4 / 12 + u^2 / 2."""
    return FluxFunction(
        "quartic",
        lambda u: u ** 4 / 12.0 + 0.5 * u * u,
        lambda u: u ** 3 / 3.0 + u,
        lambda u: u * u + 1.0,
        lambda u: 2.0 * np.asarray(u, dtype=float),
        (-1e6, 1e6),
    )


FLUXES = {
    "exponential": exponential_flux,
    "burgers": burgers_flux,
    "quartic": quartic_flux,
}


def get_flux(name):
    try:
        return FLUXES[name]()
    except KeyError:
        raise KeyError(f"unknown flux {name!r}; choose from {sorted(FLUXES)}") from None


def rankine_hugoniot_speed(flux, u_minus, u_plus):
    """Chord slope (A(u+) - A(u-)) / (u+ - u-)."""
    if u_minus == u_plus:
        raise DegenerateShockError("end states coincide")
    a = flux.A(np.array([u_minus, u_plus], dtype=float))
    return float((a[1] - a[0]) / (u_plus - u_minus))


def phi_theta(flux, x, theta):
    """Growth ratio A'(x) / A'(theta x)."""
    return flux.dA(x) / flux.dA(theta * np.asarray(x, dtype=float))


def superpoly_witness(flux, degree, coefficient_bound, search_limit,
                      theta=None, target=None, n=20_001):
    """Sampled witness that |A'| outgrows polynomials on the negative axis.

    In polynomial mode, a point x < 0 is a witness when
    |A'(x)| > coefficient_bound * sum_{k<=degree} |x|^k, the largest value
    any polynomial of that degree with coefficients bounded by
    ``coefficient_bound`` can take at x.  In ratio mode (``theta`` and
    ``target`` given) a witness has A'(theta x) < 0 and
    A'(x) / A'(theta x) >= target.

    The window [search_limit, 0) is clipped to the declared interval and
    scanned on a uniform grid.  The most negative witness is returned,
    or None when no sampled point qualifies.  This is a finite diagnostic,
    not a certificate.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if search_limit >= 0:
        raise ValueError("search_limit must be negative")
    lo = max(search_limit, flux.interval[0])
    if theta is not None:
        lo = max(lo, flux.interval[0] / max(theta, 1e-300))
    x = np.linspace(lo, 0.0, n)[:-1]
    if theta is None:
        bound = coefficient_bound * np.polyval(np.ones(degree + 1), np.abs(x))
        ok = np.abs(flux.dA(x)) > bound
    else:
        if target is None:
            raise ValueError("ratio mode needs a target")
        den = flux.dA(theta * x)
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (den < 0) & (flux.dA(x) / den >= target)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return None
    return float(x[idx[0]])


@dataclass(frozen=True)
class PressureLaw:
    """Pressure p(v) = v^(-gamma) with entropy Q(v) = v^(1-gamma)/(gamma-1).

    The entropy is normalized so that Q' = -p, making Q convex.
    """

    gamma: float = 5.0 / 3.0

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")

    def _arg(self, v):
        if np.ndim(v) == 0:
            v = float(v)
            if not v > 0.0:
                raise DomainError("pressure law: non-positive specific volume (vacuum)")
            return v
        v = np.asarray(v, dtype=float)
        if v.size and np.nanmin(v) <= 0.0:
            raise DomainError("pressure law: non-positive specific volume (vacuum)")
        return v

    def p(self, v):
        return self._arg(v) ** (-self.gamma)

    def dp(self, v):
        g = self.gamma
        return -g * self._arg(v) ** (-g - 1.0)

    def d2p(self, v):
        g = self.gamma
        return g * (g + 1.0) * self._arg(v) ** (-g - 2.0)

    def d3p(self, v):
        g = self.gamma
        return -g * (g + 1.0) * (g + 2.0) * self._arg(v) ** (-g - 3.0)

    def Q(self, v):
        g = self.gamma
        return self._arg(v) ** (1.0 - g) / (g - 1.0)

    def rel_p(self, v, w):
        """p(v|w) = p(v) - p(w) - p'(w)(v - w)."""
        return self._rel(1.0, -self.gamma, v, w)

    def rel_Q(self, v, w):
        """Q(v|w) = Q(v) - Q(w) + p(w)(v - w)."""
        g = self.gamma
        return self._rel(1.0 / (g - 1.0), 1.0 - g, v, w)

    def rel_p_offset(self, w, d):
        """p(w + d | w) from the base point and the offset."""
        w = self._arg(np.asarray(w, dtype=float))
        d = np.asarray(d, dtype=float)
        self._arg(w + d)
        return self._rel_ratio(1.0, -self.gamma, w, d / w)

    def _rel(self, c, e, v, w):
        v, w = np.broadcast_arrays(self._arg(np.asarray(v, dtype=float)),
                                   self._arg(np.asarray(w, dtype=float)))
        return self._rel_ratio(c, e, w, (v - w) / w)

    @staticmethod
    def _rel_ratio(c, e, w, x, near=0.1):
        # relative power c v^e with v = w (1 + x): closed form when |x| > near,
        # else the binomial series c w^e sum_{k>=2} binom(e, k) x^k
        if np.ndim(w) == 0 and np.ndim(x) == 0:
            return PressureLaw._rel_ratio_float(c, e, float(w), float(x), near)
        w, x = np.broadcast_arrays(np.asarray(w, dtype=float), np.asarray(x, dtype=float))
        out = np.empty(w.shape)
        far = np.abs(x) > near
        if np.any(far):
            wf, xf = w[far], x[far]
            out[far] = c * wf ** e * ((1.0 + xf) ** e - 1.0 - e * xf)
        close = ~far
        if np.any(close):
            xc = x[close]
            top = float(np.max(np.abs(xc)))
            # truncation error ~ top^terms
            terms = 2 if top < 1e-17 else int(np.ceil(-17.0 / np.log10(top))) + 1
            # binom(e, k) by the product recurrence (scipy's binom is nan for
            # negative integer e)
            k = np.arange(1, terms + 2)
            coef = np.cumprod((e - k + 1.0) / k)[1:]
            acc = np.full(xc.shape, coef[-1])
            for a in coef[-2::-1]:
                acc = acc * xc + a
            out[close] = c * w[close] ** e * xc * xc * acc
        return out if out.ndim else float(out)

    @staticmethod
    def _rel_ratio_float(c, e, w, x, near):
        # scalar twin of _rel_ratio for the profile ODE right-hand side
        if abs(x) > near:
            return c * w ** e * ((1.0 + x) ** e - 1.0 - e * x)
        top = abs(x)
        terms = 2 if top < 1e-17 else int(np.ceil(-17.0 / np.log10(top))) + 1
        coef, a = [], 1.0
        for k in range(1, terms + 2):
            a *= (e - k + 1.0) / k
            coef.append(a)
        acc = coef[-1]
        for a in coef[-2:0:-1]:
            acc = acc * x + a
        return c * w ** e * x * x * acc
