"""Weight generators on [0, 1] and their composition with profiles."""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Weight:
    """A positive W^{2,inf} function on [0, 1] with two derivatives.

    The sup/inf bounds are computed by sampling 10^4 points.
    """

    name: str
    f: Callable
    d1: Callable
    d2: Callable
    params: tuple = ()
    bounds: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        s = np.linspace(0.0, 1.0, 10_000)
        v, d1, d2 = self.f(s), self.d1(s), self.d2(s)
        object.__setattr__(self, "bounds", {
            "inf": float(np.min(v)),
            "sup": float(np.max(v)),
            "d1_sup": float(np.max(np.abs(d1))),
            "d2_sup": float(np.max(np.abs(d2))),
        })

    def __call__(self, s):
        return self.f(np.asarray(s, dtype=float))

    def prime(self, s):
        return self.d1(np.asarray(s, dtype=float))

    def second(self, s):
        return self.d2(np.asarray(s, dtype=float))

    @property
    def inf(self):
        return self.bounds["inf"]

    @property
    def sup(self):
        return self.bounds["sup"]

    @property
    def is_constant(self):
        return self.bounds["d1_sup"] == 0.0

    def is_positive(self):
        return self.inf > 0.0

    def theta(self, fraction=0.9, n=10_000):
        """Smallest theta in (1/2, 1) with min over [theta, 1] >= fraction * value at 1.

        Returns None when no theta in (1/2, 1) qualifies.
        """
        s = np.linspace(0.5, 1.0, n + 1)[1:]
        v = self.f(s)
        target = fraction * float(self.f(np.array(1.0)))
        # running minimum from the right
        tail_min = np.minimum.accumulate(v[::-1])[::-1]
        ok = np.flatnonzero(tail_min >= target)
        if ok.size == 0 or s[ok[0]] >= 1.0:
            return None
        return float(s[ok[0]])


def constant_weight(c=1.0):
    return Weight("constant",
                  lambda s: np.full_like(np.asarray(s, dtype=float), c),
                  lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                  lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                  (c,))


def affine_weight(c=0.5):
    """1 + c s; positive on [0, 1] for |c| < 1."""
    if not c > -1.0:
        raise ValueError("affine weight must stay positive on [0, 1]")
    return Weight("affine",
                  lambda s: 1.0 + c * np.asarray(s, dtype=float),
                  lambda s: np.full_like(np.asarray(s, dtype=float), c),
                  lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                  (c,))


def bump_weight(amplitude=0.3, center=0.5, width=0.25):
    """1 + amplitude * exp(-((s - center)/width)^2)."""

    def f(s):
        z = (np.asarray(s, dtype=float) - center) / width
        return 1.0 + amplitude * np.exp(-z * z)

    def d1(s):
        z = (np.asarray(s, dtype=float) - center) / width
        return amplitude * np.exp(-z * z) * (-2.0 * z / width)

    def d2(s):
        z = (np.asarray(s, dtype=float) - center) / width
        return amplitude * np.exp(-z * z) * (4.0 * z * z - 2.0) / width ** 2

    if not 1.0 + min(amplitude, 0.0) > 0.0:
        raise ValueError("bump weight must stay positive")
    return Weight("bump", f, d1, d2, (amplitude, center, width))


WEIGHTS = {
    "constant": constant_weight,
    "affine": affine_weight,
    "bump": bump_weight,
}


def get_weight(name, *params):
    try:
        factory = WEIGHTS[name]
    except KeyError:
        raise KeyError(f"unknown weight {name!r}; choose from {sorted(WEIGHTS)}") from None
    return factory(*params)


@dataclass(frozen=True)
class WeightOnLine:
    """Evaluators of a(x), a'(x), a''(x) for a weight composed with a profile."""

    a: Callable
    da: Callable
    d2a: Callable
    of_state: Callable = None

    def __call__(self, x):
        return self.a(x)


def compose_scalar(weight, profile):
    """a(x) = w(-S(x)/K) with chain-rule derivatives; S'' from the profile ODE."""
    K = profile.K

    def arg(x):
        return -profile.evaluate(x) / K

    def a(x):
        return weight(arg(x))

    def da(x):
        s = profile.evaluate(x)
        return weight.prime(-s / K) * (-profile.rhs(s) / K)

    def d2a(x):
        s = profile.evaluate(x)
        s1 = profile.rhs(s)
        s2 = (-profile.sigma + profile.flux.dA(s)) * s1
        return weight.second(-s / K) * (s1 / K) ** 2 + weight.prime(-s / K) * (-s2 / K)

    return WeightOnLine(a, da, d2a, lambda s: weight(-np.asarray(s) / K))


def compose_ns(weight, shock):
    """a(x) = w(b(v(x))) with b the normalized pressure coordinate."""
    pr, jp = shock.pressure, shock.jump_p

    def a(x):
        return weight(shock.b(shock.evaluate(x)))

    def da(x):
        v = shock.evaluate(x)
        return weight.prime(shock.b(v)) * pr.dp(v) * shock.q(v) / jp

    def d2a(x):
        v = shock.evaluate(x)
        q = shock.q(v)
        v2 = shock.q_prime(v) * q
        db = pr.dp(v) * q / jp
        d2b = (pr.d2p(v) * q * q + pr.dp(v) * v2) / jp
        return weight.second(shock.b(v)) * db ** 2 + weight.prime(shock.b(v)) * d2b

    return WeightOnLine(a, da, d2a, lambda v: weight(shock.b(v)))
