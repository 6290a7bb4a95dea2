"""Time stepping in the shock frame and the weighted relative entropy.

Both solvers evolve the difference z between the state and the viscous
profile, on a uniform grid with z pinned to 0 at the two end cells.  The
discrete operator is written as L(S + z) - L(S), so the sampled profile
is an exact fixed point while the scheme stays in conservation form.

Time integration is the two-stage IMEX scheme of Ascher, Ruuth and
Spiteri, stiffly accurate with second order: diffusion is implicit
(tridiagonal solves), the flux is explicit with a second-order
upwind-biased reconstruction of Lax-Friedrichs split fluxes.  The
pressure diffusion of the system is linearized about the stage's
starting value (one Picard update per stage).

The weighted relative entropy at shift X samples the state at x - X.
It is evaluated after the change of variables x -> x + X, i.e. the grid
state is compared with the profile and weight evaluated at x + X, which
keeps the state on its own grid.
"""

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .flux_catalog import DomainError

GAMMA_IMEX = 1.0 - 1.0 / np.sqrt(2.0)
DELTA_IMEX = 1.0 - 1.0 / (2.0 * GAMMA_IMEX)
CFL_LIMIT = 1.0
DEFAULT_CFL = 0.4


class CFLError(ValueError):
    """Time step exceeds the advective limit; ``suggested_dt`` is 0.4 of it."""

    def __init__(self, msg, suggested_dt):
        super().__init__(msg)
        self.suggested_dt = suggested_dt


class BlowupError(ArithmeticError):
    """Non-finite values or vacuum in the evolved state."""


class WindowError(ValueError):
    """Shift too large for the computational window."""


@dataclass
class SimState:
    """Grid state in the shock frame.

    ``base`` holds the profile samples (one array per field) and ``dev``
    the deviation from them; the full state is base + dev.
    """

    x: np.ndarray
    base: tuple
    dev: tuple
    t: float
    sigma: float
    dt: float
    split_speed: float

    @property
    def h(self):
        return float(self.x[1] - self.x[0])

    @property
    def fields(self):
        return tuple(b + d for b, d in zip(self.base, self.dev))

    @property
    def half_width(self):
        return float(self.x[-1])


def uniform_grid(half_width, spacing):
    n = int(np.ceil(half_width / spacing))
    return np.linspace(-half_width, half_width, 2 * n + 1)


# -- spatial operators --------------------------------------------------------

def _upwind_divergence(fp, fm, h):
    """-(d/dx) of the split fluxes; fp moves right, fm moves left.

    Second-order upwind extrapolation to the faces; the split fluxes are
    extended by zero beyond the grid, consistent with a vanishing
    deviation there.
    """
    n = fp.size
    zp = np.concatenate([[0.0, 0.0], fp, [0.0, 0.0]])
    zm = np.concatenate([[0.0, 0.0], fm, [0.0, 0.0]])
    # faces i + 1/2 for i = -1 .. n-1 (index j = i + 2 in padded arrays)
    j = np.arange(1, n + 2)
    face = 0.5 * (3.0 * zp[j] - zp[j - 1]) + 0.5 * (3.0 * zm[j + 1] - zm[j + 2])
    out = -(face[1:] - face[:-1]) / h
    out[0] = out[-1] = 0.0
    return out


def _laplacian(z, h):
    out = np.zeros_like(z)
    out[1:-1] = (z[2:] - 2.0 * z[1:-1] + z[:-2]) / h ** 2
    return out


def _solve_tridiagonal(diag, lower, upper, rhs):
    """Solve a tridiagonal system; lower[i] couples row i+1 to col i."""
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return solve_banded((1, 1), ab, rhs)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise BlowupError("non-finite values in the evolved state")


# -- scalar law ----------------------------------------------------------------

def scalar_speed(state, flux):
    u = state.base[0] + state.dev[0]
    return float(np.max(np.abs(flux.dA(u) - state.sigma)))


def _scalar_flux_rhs(state, flux, z):
    S, sig, a = state.base[0], state.sigma, state.split_speed
    try:
        dF = flux.A(S + z) - flux.A(S) - sig * z
    except DomainError as exc:
        raise BlowupError(f"state left the flux domain: {exc}") from None
    return _upwind_divergence(0.5 * (dF + a * z), 0.5 * (dF - a * z), state.h)


def _heat_solve(z_rhs, coef, h):
    """Solve (I - coef * D2) z = rhs with z = 0 at both ends."""
    n = z_rhs.size
    r = coef / h ** 2
    diag = np.full(n, 1.0 + 2.0 * r)
    lower = np.full(n - 1, -r)
    upper = np.full(n - 1, -r)
    diag[0] = diag[-1] = 1.0
    upper[0] = 0.0
    lower[-1] = 0.0
    rhs = z_rhs.copy()
    rhs[0] = rhs[-1] = 0.0
    return _solve_tridiagonal(diag, lower, upper, rhs)


def check_cfl(state, speed, dt):
    nu = dt * speed / state.h
    if nu > CFL_LIMIT:
        raise CFLError(f"CFL number {nu:.3g} exceeds {CFL_LIMIT}",
                       DEFAULT_CFL * state.h / speed)


def step_scalar(state, flux, dt=None):
    """One IMEX step of u_t = u_xx + sigma u_x - A(u)_x in the shock frame."""
    dt = state.dt if dt is None else dt
    check_cfl(state, scalar_speed(state, flux), dt)
    g, d = GAMMA_IMEX, DELTA_IMEX
    h = state.h
    z0 = state.dev[0]
    e0 = _scalar_flux_rhs(state, flux, z0)
    z1 = _heat_solve(z0 + dt * g * e0, g * dt, h)
    e1 = _scalar_flux_rhs(state, flux, z1)
    rhs = z0 + dt * (d * e0 + (1.0 - d) * e1) + dt * (1.0 - g) * _laplacian(z1, h)
    z2 = _heat_solve(rhs, g * dt, h)
    _check_finite(z2)
    return replace(state, dev=(z2,), t=state.t + dt)


# -- transformed Navier-Stokes ---------------------------------------------------

def system_speed(state, pressure):
    v = state.base[0] + state.dev[0]
    if np.any(v <= 0):
        raise BlowupError("vacuum: specific volume reached zero")
    return float(np.max(abs(state.sigma) + np.sqrt(-pressure.dp(v))))


def _pressure_jump(pressure, vt, zv):
    v = vt + zv
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise BlowupError("vacuum: specific volume reached zero")
    return pressure.p(v) - pressure.p(vt)


def _system_flux_rhs(state, pressure, zv, zh):
    vt, sig, a = state.base[0], state.sigma, state.split_speed
    dp = _pressure_jump(pressure, vt, zv)
    # U_t + F(U)_x = diffusion with F = (-sigma v - h, -sigma h + p(v))
    fv = -sig * zv - zh
    fh = -sig * zh + dp
    h = state.h
    rv = _upwind_divergence(0.5 * (fv + a * zv), 0.5 * (fv - a * zv), h)
    rh = _upwind_divergence(0.5 * (fh + a * zh), 0.5 * (fh - a * zh), h)
    return rv, rh


def _pressure_diffusion(pressure, vt, zv, h):
    """-(p(v) - p(v~))_xx on the grid."""
    return -_laplacian(_pressure_jump(pressure, vt, zv), h)


def _pressure_solve(pressure, vt, guess, rhs, coef, h):
    """Solve z - coef * N(z) = rhs with N(z) = -(p(v~ + z) - p(v~))_xx,
    linearized about ``guess``: p(v~ + z) - p(v~) ~ P(guess) + p'(v~ + guess)(z - guess).
    """
    c = pressure.dp(vt + guess)
    P = _pressure_jump(pressure, vt, guess)
    r = coef / h ** 2
    # z + r * (c z)_i'' = rhs - r * (P - c guess)''
    corr = -coef * _laplacian(P - c * guess, h)
    n = rhs.size
    diag = 1.0 - 2.0 * r * c
    lower = r * c[:-1]
    upper = r * c[1:]
    diag[0] = diag[-1] = 1.0
    upper[0] = 0.0
    lower[-1] = 0.0
    b = rhs + corr
    b[0] = b[-1] = 0.0
    return _solve_tridiagonal(diag, lower, upper, b)


def step_ns(state, pressure, dt=None):
    """One IMEX step of v_t - sigma v_x - h_x = -p(v)_xx, h_t - sigma h_x + p(v)_x = 0."""
    dt = state.dt if dt is None else dt
    check_cfl(state, system_speed(state, pressure), dt)
    g, d = GAMMA_IMEX, DELTA_IMEX
    hx = state.h
    vt = state.base[0]
    zv0, zh0 = state.dev
    ev0, eh0 = _system_flux_rhs(state, pressure, zv0, zh0)
    zv1 = _pressure_solve(pressure, vt, zv0, zv0 + dt * g * ev0, g * dt, hx)
    zh1 = zh0 + dt * g * eh0
    ev1, eh1 = _system_flux_rhs(state, pressure, zv1, zh1)
    rhs_v = (zv0 + dt * (d * ev0 + (1.0 - d) * ev1)
             + dt * (1.0 - g) * _pressure_diffusion(pressure, vt, zv1, hx))
    zv2 = _pressure_solve(pressure, vt, zv1, rhs_v, g * dt, hx)
    zh2 = zh0 + dt * (d * eh0 + (1.0 - d) * eh1)
    _check_finite(zv2, zh2)
    if np.any(vt + zv2 <= 0):
        raise BlowupError("vacuum: specific volume reached zero")
    zh2[0] = zh2[-1] = 0.0
    return replace(state, dev=(zv2, zh2), t=state.t + dt)


# -- state construction ------------------------------------------------------------

def scalar_state(profile, perturbation, x, cfl=DEFAULT_CFL):
    """Grid state S + q(S) for a shock-variable perturbation q (ShockFunction or None)."""
    S = profile.evaluate(x)
    z = np.zeros_like(S) if perturbation is None else perturbation(S)
    z[0] = z[-1] = 0.0
    flux, sig = profile.flux, profile.sigma
    speed = float(np.max(np.abs(flux.dA(S + z) - sig)))
    h = float(x[1] - x[0])
    return SimState(x, (S,), (z,), 0.0, sig, cfl * h / speed, 1.1 * speed)


def system_state(shock, w=None, g=None, x=None, cfl=DEFAULT_CFL):
    """Grid state (v~ + w(v~), h~ + g(v~))."""
    vt = shock.evaluate(x)
    ht = shock.h_of_v(vt)
    zv = np.zeros_like(vt) if w is None else w(vt)
    zh = np.zeros_like(vt) if g is None else g(vt)
    zv[0] = zv[-1] = zh[0] = zh[-1] = 0.0
    v = vt + zv
    if np.any(v <= 0):
        raise BlowupError("vacuum in the initial state")
    speed = float(np.max(abs(shock.sigma) + np.sqrt(-shock.pressure.dp(v))))
    h = float(x[1] - x[0])
    return SimState(x, (vt, ht), (zv, zh), 0.0, shock.sigma, cfl * h / speed, 1.1 * speed)


# -- weighted relative entropy -------------------------------------------------------

def _trapezoid_weights(x):
    h = x[1] - x[0]
    q = np.full(x.size, h)
    q[0] = q[-1] = 0.5 * h
    return q


def _check_shift(state, shift):
    if not abs(shift) < state.half_width / 4:
        raise WindowError(f"shift {shift} exceeds a quarter of the window half-width")


def _weight_at(weight_line, xs, states):
    if weight_line.of_state is not None:
        return weight_line.of_state(states)
    return weight_line(xs)


def weighted_relative_entropy(state, profile, weight_line, shift=0.0):
    """int a(x) eta(U(x - shift) | profile(x)) dx by the trapezoid rule.

    For a scalar state eta = |u - S|^2; for the system
    eta = (h - h~)^2 / 2 + Q(v | v~).
    """
    _check_shift(state, shift)
    x = state.x
    q = _trapezoid_weights(x)
    xs = x + shift
    same = shift == 0.0 or np.array_equal(xs, x)
    ref = state.base[0] if same else profile.evaluate(xs)
    a = _weight_at(weight_line, xs, ref)
    if len(state.dev) == 1:
        diff = state.dev[0] if same else state.base[0] + state.dev[0] - ref
        return float(np.sum(q * a * diff ** 2))
    v, h = state.fields
    ht = profile.h_of_v(ref)
    eta = 0.5 * (h - ht) ** 2 + profile.pressure.rel_Q(v, ref)
    return float(np.sum(q * a * eta))


class _Memo:
    """Cache of functional and decomposition values for one snapshot.

    Shifts whose translated grids coincide bit for bit share an entry.
    """

    def __init__(self, profile, weight, weight_line, physics):
        self.args = (profile, weight, weight_line, physics)
        self._E = {}
        self._D = {}

    @staticmethod
    def _key(state, shift):
        if not shift:
            return (id(state), "")
        return (id(state), hashlib.blake2b(np.asarray(state.x + shift).tobytes()).hexdigest())

    def E(self, state, shift):
        k = self._key(state, shift)
        if k not in self._E:
            self._E[k] = weighted_relative_entropy(state, self.args[0], self.args[2], shift)
        return self._E[k]

    def D(self, state, shift, rate):
        k = self._key(state, shift)
        if k not in self._D:
            p, w, _, ph = self.args
            self._D[k] = formula_value(state, p, w, ph, shift, 0.0)
        d = replace(self._D[k], shift_rate=float(rate))
        return d

    def forget(self, keep):
        ids = {id(s) for s in keep}
        self._E = {k: v for k, v in self._E.items() if k[0] in ids}
        self._D = {k: v for k, v in self._D.items() if k[0] in ids}


def _dx(z, h):
    """Fourth-order central first derivative, second order at the ends."""
    d = np.empty_like(z)
    d[2:-2] = (z[:-4] - 8.0 * z[1:-3] + 8.0 * z[3:-1] - z[4:]) / (12.0 * h)
    d[1] = (z[2] - z[0]) / (2.0 * h)
    d[-2] = (z[-1] - z[-3]) / (2.0 * h)
    d[0] = (z[1] - z[0]) / h
    d[-1] = (z[-1] - z[-2]) / h
    return d


def transport_scalar(state, profile, shift=0.0, floor=1e-14):
    """Shock-variable samples (y, quadrature weights, w, w_y) of a grid state.

    With the state sampled at x - shift, the node x_i carries
    y_i = S(x_i + shift) and w_i = u_i - y_i, with dy = |S'| dx.
    Nodes where |S'| falls below ``floor`` times its maximum are dropped.
    """
    x = state.x
    xs = x + shift
    y = profile.evaluate(xs)
    s1 = profile.rhs(y)
    u = state.base[0] + state.dev[0]
    ux = profile.rhs(state.base[0]) + _dx(state.dev[0], state.h)
    keep = np.abs(s1) > floor * np.max(np.abs(s1))
    keep &= (y > -profile.K) & (y < 0.0)
    q = _trapezoid_weights(x) * np.abs(s1)
    wy = (ux[keep] - s1[keep]) / s1[keep]
    return y[keep], q[keep], (u - y)[keep], wy


def transport_system(state, shock, shift=0.0, floor=1e-14):
    """Shock-variable samples (y, weights, w, w_y, g) of a system grid state."""
    x = state.x
    xs = x + shift
    y = shock.evaluate(xs)
    s1 = shock.q(y)
    v, hh = state.fields
    vx = shock.q(state.base[0]) + _dx(state.dev[0], state.h)
    keep = np.abs(s1) > floor * np.max(np.abs(s1))
    keep &= (y > shock.v_plus) & (y < shock.v_minus)
    q = _trapezoid_weights(x) * np.abs(s1)
    wy = (vx[keep] - s1[keep]) / s1[keep]
    return y[keep], q[keep], (v - y)[keep], wy, (hh - shock.h_of_v(y))[keep]


def formula_value(state, profile, weight, physics, shift=0.0, shift_rate=0.0):
    """Decomposition of the time derivative evaluated on the transported state."""
    from .ns_destab import decompose_system_samples
    from .scalar_destab import decompose_samples
    if len(state.dev) == 1:
        y, q, wv, wy = transport_scalar(state, profile, shift)
        return decompose_samples(weight, physics, profile.K, y, q, wv, wy, shift_rate)
    y, q, wv, wy, gv = transport_system(state, profile, shift)
    return decompose_system_samples(weight, profile, y, q, wv, wy, gv, shift_rate)


def derivative_decomposition_check(states, profile, weight, weight_line, physics,
                                   shift_rate=0.0, centre=1, memo=None):
    """Finite-difference derivative of the functional vs the decomposition.

    ``states`` are consecutive snapshots with a common step; the functional
    along the path X(t) = shift_rate * t is differenced at ``states[centre]``
    (centered), or one-sided second order when ``centre`` is 0.  Returns
    (relative residual, finite difference, formula).  When both values
    vanish the residual is absolute.
    """
    memo = memo or _Memo(profile, weight, weight_line, physics)
    E = [memo.E(s, shift_rate * s.t) for s in states]
    dt = states[1].t - states[0].t
    if centre == 0:
        fd = (-3.0 * E[0] + 4.0 * E[1] - E[2]) / (2.0 * dt)
    else:
        fd = (E[centre + 1] - E[centre - 1]) / (2.0 * dt)
    st = states[centre]
    formula = memo.D(st, shift_rate * st.t, shift_rate).value
    scale = max(abs(fd), abs(formula))
    if scale < 1e-300:
        return 0.0, fd, formula
    if scale <= 1e-10 and abs(formula) < 1e-10:
        return abs(fd - formula), fd, formula
    return abs(fd - formula) / abs(formula) if formula != 0 else abs(fd - formula), fd, formula


# -- shifts --------------------------------------------------------------------------

def _golden(func, a, b, tol, max_iter=200):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = func(d)
    return (c, fc) if fc <= fd else (d, fd)


def optimize_shift(functional, lo, hi, n_grid=21, tol=None, rtol_tie=1e-12):
    """Minimize ``functional`` over shifts in [lo, hi].

    A uniform grid scan is followed by golden-section refinement around
    the best grid point; the refined point is kept only if it lowers the
    value.  Grid ties (within ``rtol_tie``) go to the smallest |shift|.
    Returns (shift, value).
    """
    lo, hi = float(lo), float(hi)
    if hi < lo:
        raise ValueError("empty shift interval")
    if hi == lo:
        return lo, functional(lo)
    grid = np.linspace(lo, hi, n_grid)
    if lo < 0.0 < hi and not np.any(grid == 0.0):
        grid = np.sort(np.append(grid, 0.0))
    vals = np.array([functional(s) for s in grid])
    best = np.min(vals)
    ties = np.flatnonzero(vals <= best + rtol_tie * abs(best))
    k = ties[np.argmin(np.abs(grid[ties]))]
    x0, f0 = float(grid[k]), float(vals[k])
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, grid.size - 1)]
    tol = (hi - lo) * 1e-9 if tol is None else tol
    x1, f1 = _golden(functional, a, b, tol)
    if f1 < f0:
        return float(x1), float(f1)
    return x0, f0


@dataclass
class ShiftPath:
    """Sampled shift X(t_i) with its Lipschitz bound."""

    times: np.ndarray
    values: np.ndarray
    lipschitz: float
    mollified: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)

    def check(self, rtol=1e-9):
        if self.values[0] != 0.0:
            return False
        inc = np.abs(np.diff(self.values))
        return bool(np.all(inc <= self.lipschitz * np.diff(self.times) * (1 + rtol) + 1e-300))

    def __call__(self, t):
        return np.interp(t, self.times, self.values, left=0.0)


def _mollifier(n_nodes=401):
    s = np.linspace(-1.0, 1.0, n_nodes)
    phi = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    phi[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return s, phi / phi.sum()


def mollify_shift(path, n, width_unit=1.0):
    """X_n = phi_{1/n} * X with the mollifier supported in (0, 2/n] backward in time.

    X is extended by 0 for t < 0, so X_n(0) = 0; the discrete weights sum
    to one, so the Lipschitz bound is preserved.
    """
    s, phi = _mollifier()
    eps = width_unit / n
    lag = (s + 1.0) * eps          # support [0, 2 eps]
    t = path.times
    vals = np.array([np.sum(phi * path(ti - lag)) for ti in t])
    vals[t <= t[0]] = 0.0
    return ShiftPath(t, vals, path.lipschitz, mollified=True)


def sawtooth_path(lipschitz=1.0, period=0.25, t_end=1.0, n=4001):
    t = np.linspace(0.0, t_end, n)
    phase = np.mod(t, period) / period
    vals = lipschitz * period * (0.5 - np.abs(phase - 0.5))
    return ShiftPath(t, vals, lipschitz)


# -- experiments ------------------------------------------------------------------------

@dataclass
class EntropyReport:
    times: np.ndarray
    values: dict
    initial: float
    verdict: bool
    T_star: float
    decomposition: list = field(default_factory=list)
    greedy_path: Optional[ShiftPath] = None
    drift: float = np.nan
    notes: list = field(default_factory=list)

    def rows(self):
        out = []
        for k, t in enumerate(self.times):
            for name in sorted(self.values):
                out.append((float(t), name, float(self.values[name][k])))
        return out


def measure_verdict(times, values, initial):
    """Largest sampled T with functional(t) > initial for all t in (0, T] and all strategies."""
    T, ok = 0.0, True
    names = sorted(values)
    for k in range(1, len(times)):
        if all(values[n][k] > initial for n in names):
            T = float(times[k])
        else:
            break
    return T > 0.0, T


class StageError(RuntimeError):
    """A pipeline stage failed; the message carries the stage tag."""

    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - tag and propagate
        raise StageError(name, exc) from exc


@dataclass
class ExperimentSettings:
    """Numerical settings shared by the scalar and system experiments.

    Fields left as None take model-dependent defaults: grid spacing
    0.02 (scalar) or 0.08 (system) over the steepest decay rate, collar
    floor 1e-10 (scalar) or 1e-6 (system) relative to the jump, and a
    window sized by the profile decay (scalar) or by the perturbation
    support (system).
    """

    eps: float = 1e-3
    spacing_factor: Optional[float] = None
    cfl: float = DEFAULT_CFL
    steps: int = 5
    sample_every: int = 1
    lipschitz: float = 1.0
    n_rates: int = 9
    n_grid: int = 11
    delta: Optional[float] = None
    inner: Optional[float] = None
    window: Optional[str] = None
    threads: int = 1

    def __post_init__(self):
        if not 0.0 < self.cfl <= CFL_LIMIT:
            raise ValueError("cfl must lie in (0, 1]")
        if self.steps < 1 or self.sample_every < 1:
            raise ValueError("steps and sample_every must be positive")
        if self.window not in (None, "decay", "support"):
            raise ValueError("window must be 'decay' or 'support'")

    def resolved(self, system):
        pick = lambda v, scalar, ns: (ns if system else scalar) if v is None else v
        return replace(self,
                       spacing_factor=pick(self.spacing_factor, 0.02, 0.08),
                       inner=pick(self.inner, 1e-10, 1e-6),
                       window=pick(self.window, "decay", "support"))


def _window_half_width(profile, decay_tol, support, reach, mode, margin_steps):
    lo = profile.invert_tail(decay_tol, "left")
    hi = profile.invert_tail(decay_tol, "right")
    decay = max(abs(lo), abs(hi))
    if mode == "decay":
        L = 4.0 * decay
    else:
        L = 1.25 * max(abs(support[0]), abs(support[1])) + margin_steps
    return L + reach


def _support_extent(profile, f, x):
    vals = f(profile.evaluate(x))
    nz = np.flatnonzero(vals != 0.0)
    if nz.size == 0:
        return (0.0, 0.0)
    return (float(x[nz[0]]), float(x[nz[-1]]))


def _run(state, step, profile, weight, weight_line, physics, settings):
    """Evolve and evaluate the strategies; returns an EntropyReport."""
    S = settings
    rates = np.linspace(-S.lipschitz, S.lipschitz, S.n_rates)
    names = ["zero"] + [f"rate{r:+.3f}" for r in rates] + ["greedy"]
    memo = _Memo(profile, weight, weight_line, physics)
    E0 = memo.E(state, 0.0)
    values = {n: [E0] for n in names}
    times = [0.0]
    greedy_t, greedy_x = [0.0], [0.0]
    decomp = []
    pool = ThreadPoolExecutor(max_workers=S.threads) if S.threads > 1 else None

    def evaluate(st, shifts):
        f = lambda X: memo.E(st, X)
        if pool is None:
            return [f(X) for X in shifts]
        return list(pool.map(f, shifts))

    # decomposition at t = 0 along the zero shift and the rate grid
    snaps = [state]
    st = state
    for _ in range(2):
        st = step(st)
        snaps.append(st)
    d0 = {}
    for r in rates:
        res, fd, fo = derivative_decomposition_check(snaps, profile, weight, weight_line,
                                                     physics, r, centre=0, memo=memo)
        d0[float(r)] = fo
        decomp.append({"t": 0.0, "rate": float(r), "finite_difference": fd,
                       "formula": fo, "residual": res})
    prev = state
    cur = state
    ahead = {1: snaps[1], 2: snaps[2]}
    k = 0
    try:
        while k < S.steps:
            nxt = ahead.pop(k + 1) if (k + 1) in ahead else step(cur)
            prev, cur = cur, nxt
            k += 1
            if k % S.sample_every:
                continue
            t = cur.t
            shifts = [0.0] + [float(r * t) for r in rates]
            vals = evaluate(cur, shifts)
            # greedy: best reachable shift under the rate clamp
            dtk = t - greedy_t[-1]
            lo = max(greedy_x[-1] - S.lipschitz * dtk, -S.lipschitz * t)
            hi = min(greedy_x[-1] + S.lipschitz * dtk, S.lipschitz * t)
            gx, gv = optimize_shift(
                lambda X: memo.E(cur, X), lo, hi, S.n_grid)
            greedy_t.append(t)
            greedy_x.append(gx)
            for n, v in zip(names[:-1], vals):
                values[n].append(v)
            values["greedy"].append(gv)
            times.append(t)
            # decomposition along each constant rate (centered in time)
            after = ahead[k + 1] = step(cur)
            memo.forget([prev, cur, after])
            for r in rates:
                res, fd, fo = derivative_decomposition_check([prev, cur, after], profile, weight,
                                                             weight_line, physics, r, centre=1,
                                                             memo=memo)
                decomp.append({"t": t, "rate": float(r), "finite_difference": fd,
                               "formula": fo, "residual": res})
                base = d0[float(r)]
                if base != 0:
                    rel = abs(fo - base) / abs(base)
                    decomp[-1]["drift"] = rel
    finally:
        if pool is not None:
            pool.shutdown()
    times = np.array(times)
    values = {n: np.array(v) for n, v in values.items()}
    verdict, T_star = measure_verdict(times, values, E0)
    drifts = [d["drift"] for d in decomp if "drift" in d and d["t"] <= T_star]
    drift = max(drifts) if drifts else 0.0
    path = ShiftPath(np.array(greedy_t), np.array(greedy_x), S.lipschitz)
    notes = ["greedy adversary is a clamped argmin, not a proven worst case among Lipschitz paths"]
    return EntropyReport(times, values, E0, verdict, T_star, decomp, path, drift, notes)


def run_scalar_experiment(flux, weight, K, settings=None):
    """Scalar destabilization pipeline at a given K."""
    from .scalar_destab import (build_base_perturbation, project_to_compact_support,
                                solve_shift_condition)
    from .wave_profiles import ShockProfile
    from .weights import compose_scalar

    S = (settings or ExperimentSettings()).resolved(system=False)
    prof = _stage("profile", ShockProfile, flux, K)
    spacing = S.spacing_factor / prof.layer_rate()
    pert = _stage("perturbation", build_base_perturbation, weight, K)
    delta = K / 64 if S.delta is None else S.delta
    proj, _ = _stage("projection", project_to_compact_support, weight, K, pert.base, delta,
                     S.inner * K)
    pert = replace(pert, base=proj)
    pert = _stage("shift-condition", solve_shift_condition, weight, K, pert, S.eps)
    total = pert.total
    wl = compose_scalar(weight, prof)

    def build_state():
        probe = uniform_grid(prof.half_width, spacing)
        support = _support_extent(prof, total, probe)
        reach = S.lipschitz * (S.steps + 2) * spacing
        L = _window_half_width(prof, 1e-8 * K, support, reach, S.window, 0.0)
        x = uniform_grid(L, spacing)
        st = scalar_state(prof, total, x, S.cfl)
        return st

    state = _stage("grid", build_state)
    step = lambda st: step_scalar(st, flux)
    report = _stage("simulate", _run, state, step, prof, weight, wl, flux, S)
    report.notes.append(f"K={K} lam={pert.lam:.6g} lam_star={pert.lam_star:.6g} delta={delta:.6g}")
    return report, state, prof, pert


def run_system_experiment(pressure, weight, v_minus, u_minus, v_plus, settings=None):
    """System destabilization pipeline at a given v+."""
    from .ns_destab import (build_system_perturbation, project_system_to_compact_support,
                            solve_system_shift)
    from .wave_profiles import NSShock
    from .weights import compose_ns

    S = (settings or ExperimentSettings()).resolved(system=True)
    shock = _stage("profile", NSShock, pressure, v_minus, u_minus, v_plus, lazy=False)
    spacing = S.spacing_factor / max(shock.end_rates())
    base = _stage("perturbation", build_system_perturbation, weight, shock)
    delta = 0.05 if S.delta is None else S.delta
    proj, _ = _stage("projection", project_system_to_compact_support, weight, shock, base,
                     delta, S.inner)
    pert = _stage("shift-condition", solve_system_shift, weight, shock, proj, S.eps)
    w, g = pert.total
    wl = compose_ns(weight, shock)

    def build_state():
        probe = uniform_grid(shock.half_width, spacing)
        sw = _support_extent(shock, w, probe)
        sg = _support_extent(shock, g, probe)
        support = (min(sw[0], sg[0]), max(sw[1], sg[1]))
        reach = S.lipschitz * (S.steps + 2) * spacing
        L = _window_half_width(shock, 1e-8 * (v_minus - v_plus), support, reach, S.window,
                               50.0 * spacing)
        x = uniform_grid(L, spacing)
        return system_state(shock, w, g, x, S.cfl)

    state = _stage("grid", build_state)
    step = lambda st: step_ns(st, pressure)
    report = _stage("simulate", _run, state, step, shock, weight, wl, pressure, S)
    report.notes.append(f"v_plus={v_plus} lam={pert.lam:.6g} lam_star={pert.lam_star:.6g}")
    return report, state, shock, pert


def run_destabilization_experiment(config):
    """Run the scalar or system pipeline described by a mapping.

    Keys: ``model`` ("scalar" or "system"), ``weight`` and
    ``weight_params``; for the scalar model ``flux`` and ``K``; for the
    system ``gamma``, ``v_minus``, ``u_minus`` and ``v_plus``.  Any
    ExperimentSettings field may also be given.  Returns the EntropyReport.
    """
    from .flux_catalog import PressureLaw, get_flux
    from .weights import get_weight

    cfg = dict(config)
    model = cfg.pop("model", "scalar")
    weight = get_weight(cfg.pop("weight", "constant"), *cfg.pop("weight_params", ()))
    names = set(ExperimentSettings.__dataclass_fields__)
    settings = ExperimentSettings(**{k: cfg.pop(k) for k in list(cfg) if k in names})
    if model == "scalar":
        flux = get_flux(cfg.pop("flux", "exponential"))
        K = float(cfg.pop("K"))
        args = (flux, weight, K, settings)
        run = run_scalar_experiment
    elif model == "system":
        pressure = PressureLaw(float(cfg.pop("gamma", 5.0 / 3.0)))
        args = (pressure, weight, float(cfg.pop("v_minus", 1.0)), float(cfg.pop("u_minus", 0.0)),
                float(cfg.pop("v_plus")), settings)
        run = run_system_experiment
    else:
        raise ValueError(f"unknown model {model!r}")
    if cfg:
        raise ValueError(f"unknown experiment keys: {sorted(cfg)}")
    return run(*args)[0]
