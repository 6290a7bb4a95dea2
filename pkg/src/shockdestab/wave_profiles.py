"""Viscous shock profiles for the scalar law and the transformed system.

Both profiles are heteroclinic orbits of a scalar ODE.  They are
integrated from the midpoint value outward in both directions, so each
half run converges onto a stable end state.  The profile midpoint sits
at x = 0.
"""

from functools import cached_property

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline, PchipInterpolator

from .flux_catalog import DomainError, PressureLaw, rankine_hugoniot_speed


class WindowTooSmallError(RuntimeError):
    """Profile tails have not decayed inside the computational window."""


class IntegrationError(RuntimeError):
    """The profile ODE integrator failed."""


class RangeError(ValueError):
    """Requested state lies outside the open interval between end states."""


class BranchError(ValueError):
    """End states do not form an admissible 1-shock."""


MAX_DOUBLINGS = 10


class _DenseTable:
    """Vectorized evaluation of a DOP853 dense-output solution.

    Reproduces the per-segment polynomial of scipy's dense output, but
    selects segments with one searchsorted call instead of a Python loop.
    Falls back to the original solution when the segment data are not
    available.
    """

    def __init__(self, sol):
        self._sol = sol
        ints = sol.interpolants
        self.fast = all(hasattr(i, "F") and hasattr(i, "y_old") for i in ints)
        if not self.fast:
            return
        t0 = np.array([float(i.t_old) for i in ints])
        h = np.array([float(i.h) for i in ints])
        lo = np.minimum(t0, t0 + h)
        order = np.argsort(lo)
        self._lo = lo[order]
        self._t0 = t0[order]
        self._h = h[order]
        self._F = np.stack([np.asarray(ints[k].F)[:, 0] for k in order])
        self._y0 = np.array([float(ints[k].y_old[0]) for k in order])

    def __call__(self, t):
        if not self.fast:
            return self._sol(t)[0]
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self._lo, t, side="right") - 1, 0, self._lo.size - 1)
        x = (t - self._t0[k]) / self._h[k]
        F = self._F[k]
        y = np.zeros_like(t)
        for i in range(F.shape[1]):
            y = y + F[:, F.shape[1] - 1 - i]
            y = y * (x if i % 2 == 0 else 1.0 - x)
        return y + self._y0[k]


class _Profile:
    """Shared evaluation and inversion for monotone decreasing profiles."""

    lo_state: float
    hi_state: float

    def _setup(self, rhs, near, mid, half_width, spacing, tau, rate, rtol=1e-12, lazy=False):
        # integrate in the stretched coordinate rate * x so the ODE is O(1);
        # near(end, d) is rhs(end + d) written without cancellation for small d
        self._rhs = rhs
        self._near = near
        self._scale = rate
        self.tau_tail = tau
        self._request = (mid, half_width, spacing, tau, rate, rtol)
        if not lazy:
            self._solution

    def _deviation_rhs(self, end, sign):
        # e = sign * (state - end) >= 0 decays to zero along the tail
        rhs, near, rate = self._rhs, self._near, self._scale
        cut = 1e-2 * (self.hi_state - self.lo_state)

        def f(t, y):
            d = sign * float(y[0])
            val = near(end, d) if abs(d) <= cut else rhs(end + d)
            return np.atleast_1d(sign * val / rate)

        return f

    @cached_property
    def _solution(self):
        mid, half_width, spacing, tau, rate, rtol = self._request
        lo, hi = self.lo_state, self.hi_state
        span = hi - lo
        f_right = self._deviation_rhs(lo, 1.0)
        f_left = self._deviation_rhs(hi, -1.0)
        # the deviations decay geometrically, so pure relative control keeps
        # them positive and the tails monotone
        atol = 1e-300
        L = half_width
        for _ in range(MAX_DOUBLINGS + 1):
            right = solve_ivp(f_right, (0.0, L * rate), [mid - lo], method="DOP853",
                              rtol=rtol, atol=atol, dense_output=True)
            left = solve_ivp(f_left, (0.0, -L * rate), [hi - mid], method="DOP853",
                             rtol=rtol, atol=atol, dense_output=True)
            if right.status != 0 or left.status != 0:
                raise IntegrationError(f"profile integration failed: {right.message}; {left.message}")
            err_r = abs(right.y[0, -1])
            err_l = abs(left.y[0, -1])
            if err_r <= tau and err_l <= tau:
                break
            L *= 2.0
        else:
            raise WindowTooSmallError(
                f"tails not below {tau:g} after {MAX_DOUBLINGS} doublings "
                f"(errors {err_l:g}, {err_r:g}, span {span:g})")
        n = int(np.ceil(L / spacing))
        return _DenseTable(right.sol), _DenseTable(left.sol), L, L / n, n

    @property
    def half_width(self):
        return self._solution[2]

    @property
    def spacing(self):
        return self._solution[3]

    @property
    def _n_half(self):
        return self._solution[4]

    # grid samples are built on first use; the shock-variable functionals
    # never need them
    @cached_property
    def x(self):
        return np.linspace(-self.half_width, self.half_width, 2 * self._n_half + 1)

    @cached_property
    def values(self):
        return self.evaluate(self.x)

    @cached_property
    def derivs(self):
        return self._rhs(self.values)

    @cached_property
    def _inverse(self):
        # monotone inverse: increasing state -> position
        ys = self.values[::-1]
        xs = self.x[::-1]
        keep = np.concatenate([[True], ys[1:] > np.maximum.accumulate(ys)[:-1]])
        return PchipInterpolator(ys[keep], xs[keep])

    def evaluate(self, x):
        """Profile value at arbitrary positions (end states beyond the window)."""
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        L = self.half_width
        pos = x >= 0
        r = pos & (x <= L)
        l = (~pos) & (x >= -L)
        right, left = self._solution[:2]
        out[x > L] = self.lo_state
        out[x < -L] = self.hi_state
        if np.any(r):
            out[r] = self.lo_state + right(x[r] * self._scale)
        if np.any(l):
            out[l] = self.hi_state - left(x[l] * self._scale)
        return out

    def derivative(self, x):
        return self._rhs(self.evaluate(x))

    def rhs(self, y):
        return self._rhs(np.asarray(y, dtype=float))

    def sampled_interpolant(self):
        """Cubic spline through the grid samples (for convergence checks)."""
        return CubicSpline(self.x, self.values)

    def invert(self, y):
        """Position x with profile(x) = y; PCHIP guess refined by bisection."""
        y = float(y)
        if not (self.lo_state < y < self.hi_state):
            raise RangeError(f"state {y} not strictly between end states")
        x0 = float(self._inverse(y))
        # bracket around the guess; the profile is decreasing
        step = max(self.spacing, 1e-300)
        lo, hi = x0 - step, x0 + step
        while self.evaluate(lo) < y:
            lo -= 2 * step
            step *= 2
        step = self.spacing
        while self.evaluate(hi) > y:
            hi += 2 * step
            step *= 2
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if self.evaluate(mid) > y:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def invert_tail(self, tol, side):
        """Position beyond which the profile is within ``tol`` of the end state on ``side``."""
        if not 0 < tol < self.hi_state - self.lo_state:
            raise ValueError("tail tolerance must lie inside the state span")
        if side == "right":
            return self.invert(self.lo_state + tol)
        return self.invert(self.hi_state - tol)

    def ode_residual(self):
        """Max residual of a 6th-order central difference of the samples vs the ODE."""
        s, h = self.values, self.spacing
        c = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
        d = np.zeros(s.size - 6)
        for j, cj in enumerate(c):
            if cj:
                d += cj * s[j:j + s.size - 6]
        d /= h
        return float(np.max(np.abs(d - self.derivs[3:-3])))

    def to_csv_rows(self):
        return [(float(a), float(b)) for a, b in zip(self.x, self.values)]


class ShockProfile(_Profile):
    """Scalar viscous shock from u- = 0 to u+ = -K.

    The profile solves S' = -sigma S + A(S), with S(0) = -K/2.
    """

    def __init__(self, flux, K, half_width=None, spacing=None, tau_tail=None):
        if not K > 0:
            raise ValueError("K must be positive")
        self.flux = flux
        self.K = float(K)
        self.u_minus = 0.0
        self.u_plus = -self.K
        self.sigma = rankine_hugoniot_speed(flux, 0.0, -self.K)
        self.lo_state, self.hi_state = self.u_plus, self.u_minus
        sig = self.sigma
        rate = self.layer_rate()
        if spacing is None:
            spacing = 0.02 / rate
        spacing = min(spacing, 0.1 / max(abs(float(flux.dA(-self.K))), 1e-300))
        if half_width is None:
            half_width = 40.0 / min(abs(float(flux.dA(-self.K)) - sig), abs(sig))
        tau = 1e-10 * self.K if tau_tail is None else tau_tail
        # rhs vanishes at both end states, leaving slope and relative flux
        near = lambda e, d: d * (flux.dA(e) - sig) + flux.relative_offset(e, d)
        self._setup(lambda s: -sig * s + flux.A(s), near,
                    -0.5 * self.K, half_width, spacing, tau, rate)

    def layer_rate(self):
        """Largest linearized rate at the end states; sets the layer width."""
        return max(abs(self.sigma), abs(float(self.flux.dA(-self.K)) - self.sigma), 1e-12)

    def second_derivative(self, x):
        s = self.evaluate(x)
        return (-self.sigma + self.flux.dA(s)) * self._rhs(s)


def solve_scalar_profile(flux, K, half_width=None, spacing=None, tau_tail=None):
    """Build the scalar profile; see :class:`ShockProfile`."""
    return ShockProfile(flux, K, half_width, spacing, tau_tail)


class NSShock(_Profile):
    """Transformed Navier-Stokes 1-shock (v, h) with v- > v+ > 0.

    The specific volume solves v' = q(v) with v(0) = (v- + v+)/2 and the
    effective velocity is h = u- + (p(v) - p(v-)) / sigma.
    """

    def __init__(self, pressure, v_minus, u_minus, v_plus, half_width=None,
                 spacing=None, tau_tail=None, lazy=True):
        if v_plus <= 0:
            raise BranchError("v_plus must be positive (vacuum)")
        if v_plus >= v_minus:
            raise BranchError("1-shock requires v_plus < v_minus")
        self.pressure = pressure
        self.v_minus, self.v_plus = float(v_minus), float(v_plus)
        self.u_minus = float(u_minus)
        pm, pp = float(pressure.p(v_minus)), float(pressure.p(v_plus))
        self.jump_p = pp - pm
        self.sigma = -np.sqrt(-(pp - pm) / (v_plus - v_minus))
        self.u_plus = self.u_minus - self.sigma * (self.v_plus - self.v_minus)
        self.lo_state, self.hi_state = self.v_plus, self.v_minus
        rates = self.end_rates()
        if spacing is None:
            spacing = 0.02 / max(rates)
        if half_width is None:
            half_width = 40.0 / min(rates)
        tau = 1e-10 * (self.v_minus - self.v_plus) if tau_tail is None else tau_tail
        # the shock-variable functionals only need q(v), so the profile ODE
        # is integrated on first evaluation
        self._setup(self.q, self._q_near, 0.5 * (self.v_minus + self.v_plus), half_width,
                    spacing, tau, max(rates), lazy=lazy)

    @cached_property
    def h_values(self):
        return self.h_of_v(self.values)

    def end_rates(self):
        """Linearized decay rates |q'(v-)|, |q'(v+)| of the two tails."""
        return [float(abs(self.q_prime(np.array(v)))) for v in (self.v_minus, self.v_plus)]

    def _numerator(self, v):
        pr, vm = self.pressure, self.v_minus
        return self.sigma * (v - vm) + (pr.p(v) - pr.p(vm)) / self.sigma

    def _q_near(self, end, d):
        # the numerator vanishes at both end states
        pr, sig = self.pressure, self.sigma
        g = pr.gamma
        if not end + d > 0.0:
            raise DomainError("pressure law: non-positive specific volume (vacuum)")
        num = d * (sig - g * end ** (-g - 1.0) / sig) + pr.rel_p_offset(end, d) / sig
        return num / (-g * (end + d) ** (-g - 1.0))

    def q(self, v):
        """Profile slope as a function of the state."""
        v = np.asarray(v, dtype=float)
        return self._numerator(v) / self.pressure.dp(v)

    def q_prime(self, v):
        pr = self.pressure
        v = np.asarray(v, dtype=float)
        dn = self.sigma + pr.dp(v) / self.sigma
        return (dn * pr.dp(v) - self._numerator(v) * pr.d2p(v)) / pr.dp(v) ** 2

    def b(self, v):
        """Normalized pressure coordinate: 0 at v-, 1 at v+."""
        pr = self.pressure
        return (pr.p(v) - pr.p(self.v_minus)) / self.jump_p

    def h_of_v(self, v):
        pr = self.pressure
        return self.u_minus + (pr.p(v) - pr.p(self.v_minus)) / self.sigma

    def evaluate_h(self, x):
        return self.h_of_v(self.evaluate(x))

    def rankine_hugoniot_residuals(self):
        pr = self.pressure
        dv = self.v_plus - self.v_minus
        du = self.u_plus - self.u_minus
        r1 = -self.sigma * dv - du
        r2 = -self.sigma * du + float(pr.p(self.v_plus) - pr.p(self.v_minus))
        return r1, r2


def solve_ns_profile(pressure, v_minus, u_minus, v_plus, half_width=None,
                     spacing=None, tau_tail=None):
    """Build and integrate the transformed Navier-Stokes shock; see :class:`NSShock`."""
    return NSShock(pressure, v_minus, u_minus, v_plus, half_width, spacing, tau_tail, lazy=False)


def invert_profile(profile, y):
    return profile.invert(y)
