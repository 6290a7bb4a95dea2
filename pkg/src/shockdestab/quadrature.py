"""Composite quadrature rules used by the shock-variable functionals.

All functionals in this package are integrals over a bounded state
interval.  They are evaluated with composite Simpson rules whose panel
boundaries are aligned with the breakpoints of the integrand (ramp ends,
collar edges, bump supports), so that piecewise-smooth integrands keep
the full fourth-order convergence.
"""

from functools import lru_cache

import numpy as np


def _simpson_piece(a, b, n):
    """Nodes and weights of composite Simpson on [a, b] with n panels (n even)."""
    x = np.linspace(a, b, n + 1)
    h = (b - a) / n
    w = np.full(n + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return x, w * h / 3.0


def simpson_rule(breakpoints, h_max, min_panels=8):
    """Composite Simpson rule over sorted breakpoints.

    Parameters
    ----------
    breakpoints : sequence of float
        Interval end points plus interior points where the integrand
        loses smoothness.  Duplicates and unsorted input are tolerated.
    h_max : float
        Largest admissible panel width.
    min_panels : int
        Minimum number of panels on every sub-interval.

    Returns
    -------
    nodes, weights : ndarray
        Quadrature nodes (shared breakpoints appear once) and weights.
    """
    pts = np.unique(np.asarray(breakpoints, dtype=float))
    if pts.size < 2:
        raise ValueError("need at least two distinct breakpoints")
    xs, ws = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(min_panels, int(np.ceil((b - a) / h_max)))
        n += n % 2
        x, w = _simpson_piece(a, b, n)
        if xs:
            ws[-1][-1] += w[0]
            x, w = x[1:], w[1:]
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


@lru_cache(maxsize=None)
def gauss_legendre_unit(n):
    """Gauss-Legendre nodes and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def segment_integral(func, lo, hi, n=20):
    """Integrate ``func`` over the segments [lo, hi] elementwise.

    ``lo`` and ``hi`` are arrays of equal shape; the result has the same
    shape.  A fixed n-point Gauss-Legendre rule is used on every segment,
    which is accurate to round-off for the analytic integrands that appear
    in Taylor remainders.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    t, w = gauss_legendre_unit(n)
    span = hi - lo
    k = lo[..., None] + span[..., None] * t
    return span * np.sum(func(k) * w, axis=-1)
