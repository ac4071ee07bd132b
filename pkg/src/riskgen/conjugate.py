"""Scalar cost functions on [0, inf) and their Fenchel-Legendre conjugates.

A cost ``c`` is nondecreasing with ``c(0) <= 0``.  Its conjugate is
``c*(w) = sup_{v >= 0} (w v - c(v))``, which equals ``-c(0)`` for ``w <= 0``.
On the real line a cost acts through ``phi(u) = c(|u|)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from riskgen.errors import DomainError

CLOSED_FORMS = ("quadratic", "power")
KNOT_KINDS = ("piecewise_linear", "tabulated")
TAIL_KINDS = ("quadratic", "infinite", "linear")


@dataclass(frozen=True, eq=False)
class CostFunction:
    """A nondecreasing cost ``c`` on ``[0, inf)``.

    Build instances with the classmethods.  Knot kinds interpolate linearly
    between knots and continue past the last knot with a tail: ``"quadratic"``
    (``c_n + s d + k d^2 / 2`` with ``s`` the last slope), ``"infinite"``
    (``+inf``), ``"linear"`` (not superlinear, so conjugates fail), or a
    closed-form ``CostFunction`` used verbatim beyond the last knot.
    """

    kind: str
    gamma: float = 1.0
    p: float = 2.0
    scale: float = 1.0
    knots_v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    knots_c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tail: object = "quadratic"
    tail_slope: float = 0.0
    tail_curvature: float = 1.0

    # constructors

    @classmethod
    def quadratic(cls, gamma=1.0):
        """``c(v) = v^2 / (2 gamma)``."""
        if not gamma > 0:
            raise DomainError(f"quadratic cost needs gamma > 0, got {gamma}")
        return cls("quadratic", gamma=float(gamma))

    @classmethod
    def power(cls, p, scale=1.0):
        """``c(v) = scale * v^p`` with ``p > 1``."""
        if not p > 1:
            raise DomainError(f"power cost needs p > 1, got {p}")
        if not scale > 0:
            raise DomainError(f"power cost needs scale > 0, got {scale}")
        return cls("power", p=float(p), scale=float(scale))

    @classmethod
    def piecewise_linear(cls, knots, tail="quadratic", tail_curvature=1.0):
        v = np.array([k[0] for k in knots], dtype=float)
        c = np.array([k[1] for k in knots], dtype=float)
        return cls._from_knots("piecewise_linear", v, c, tail, tail_curvature)

    @classmethod
    def tabulated(cls, step, values, tail="quadratic", tail_curvature=1.0):
        """Values sampled at ``0, step, 2 step, ...``."""
        if not step > 0:
            raise DomainError(f"tabulation step must be positive, got {step}")
        c = np.asarray(values, dtype=float)
        v = step * np.arange(c.size, dtype=float)
        return cls._from_knots("tabulated", v, c, tail, tail_curvature)

    @classmethod
    def _from_knots(cls, kind, v, c, tail, tail_curvature):
        if v.size == 0 or v.shape != c.shape:
            raise DomainError("knot costs need matching, nonempty v and c arrays")
        if v[0] != 0.0:
            raise DomainError("the first knot must sit at v = 0")
        if np.any(np.diff(v) <= 0):
            raise DomainError("knot abscissae must be strictly increasing")
        if not np.all(np.isfinite(c)):
            raise DomainError("knot values must be finite; use tail='infinite' for +inf")
        if np.any(np.diff(c) < 0):
            raise DomainError("cost must be nondecreasing")
        if c[0] > 0:
            raise DomainError(f"cost must satisfy c(0) <= 0, got {c[0]}")
        if isinstance(tail, CostFunction):
            if tail.kind not in CLOSED_FORMS:
                raise DomainError("a cost-valued tail must be quadratic or power")
            if tail.evaluate(v[-1]) < c[-1]:
                raise DomainError("tail drops below the last knot value")
        elif tail not in TAIL_KINDS:
            raise DomainError(f"unknown tail {tail!r}")
        if not tail_curvature > 0:
            raise DomainError("tail curvature must be positive")
        slope = float((c[-1] - c[-2]) / (v[-1] - v[-2])) if v.size > 1 else 0.0
        v.setflags(write=False)
        c.setflags(write=False)
        return cls(kind, knots_v=v, knots_c=c, tail=tail, tail_slope=slope,
                   tail_curvature=float(tail_curvature))

    # evaluation

    @property
    def closed_form(self):
        return self.kind in CLOSED_FORMS

    @property
    def superlinear(self):
        return self.closed_form or self.tail != "linear"

    @property
    def at_zero(self):
        return 0.0 if self.closed_form else float(self.knots_c[0])

    def evaluate(self, v):
        """``c(v)`` for ``v >= 0`` (scalar or array); may return ``inf``."""
        v = np.asarray(v, dtype=float)
        if np.any(v < 0):
            raise DomainError("cost evaluated at a negative argument")
        if self.kind == "quadratic":
            out = v * v / (2.0 * self.gamma)
        elif self.kind == "power":
            out = self.scale * v ** self.p
        else:
            out = self._evaluate_knots(v)
        return float(out) if np.ndim(out) == 0 else out

    __call__ = evaluate

    def on_line(self, u):
        """``phi(u) = c(|u|)`` on the real line."""
        return self.evaluate(np.abs(u))

    def _evaluate_knots(self, v):
        vn, cn = self.knots_v[-1], self.knots_c[-1]
        shape = v.shape
        v = np.atleast_1d(v)
        out = np.interp(v, self.knots_v, self.knots_c)
        beyond = v > vn
        if np.any(beyond):
            d = v[beyond] - vn
            if isinstance(self.tail, CostFunction):
                out[beyond] = self.tail.evaluate(v[beyond])
            elif self.tail == "quadratic":
                out[beyond] = cn + self.tail_slope * d + 0.5 * self.tail_curvature * d * d
            elif self.tail == "linear":
                out[beyond] = cn + self.tail_slope * d
            else:
                out[beyond] = np.inf
        return out.reshape(shape)

    # inverse and maximizers

    def level(self, y):
        """Smallest ``v >= 0`` with ``c(v) >= y``."""
        y = float(y)
        if y <= self.at_zero:
            return 0.0
        if self.kind == "quadratic":
            return math.sqrt(2.0 * self.gamma * y)
        if self.kind == "power":
            return (y / self.scale) ** (1.0 / self.p)
        v, c = self.knots_v, self.knots_c
        if y <= c[-1]:
            j = int(np.searchsorted(c, y, side="left"))
            if c[j] == c[j - 1]:
                return float(v[j])
            return float(v[j - 1] + (y - c[j - 1]) * (v[j] - v[j - 1]) / (c[j] - c[j - 1]))
        vn, cn, s, k = v[-1], c[-1], self.tail_slope, self.tail_curvature
        if isinstance(self.tail, CostFunction):
            return max(float(vn), self.tail.level(y))
        if self.tail == "infinite":
            return float(vn)
        if self.tail == "linear":
            if s <= 0:
                raise DomainError("flat linear tail never reaches the requested level")
            return float(vn + (y - cn) / s)
        return float(vn + (-s + math.sqrt(s * s + 2.0 * k * (y - cn))) / k)

    def maximizer(self, w):
        """Smallest maximizer of ``w v - c(v)`` over ``v >= 0`` (array-aware)."""
        return _conjugate_parts(self, w)[1]

    # hull of knot kinds

    @cached_property
    def _hull(self):
        return _lower_hull(self.knots_v, self.knots_c)

    def hull(self):
        """Vertices of the lower convex hull of the knot set."""
        return self._hull


def _lower_hull(v, c):
    keep = []
    for i in range(v.size):
        while len(keep) >= 2:
            a, b = keep[-2], keep[-1]
            cross = (v[b] - v[a]) * (c[i] - c[a]) - (c[b] - c[a]) * (v[i] - v[a])
            if cross <= 0:
                keep.pop()
            else:
                break
        keep.append(i)
    idx = np.array(keep)
    return v[idx], c[idx]


def _closed_form_parts(c, w):
    wp = np.maximum(w, 0.0)
    if c.kind == "quadratic":
        vstar = c.gamma * wp
        return 0.5 * c.gamma * wp * wp, vstar
    vstar = (wp / (c.p * c.scale)) ** (1.0 / (c.p - 1.0))
    return (c.p - 1.0) * c.scale * vstar ** c.p, vstar


def _conjugate_parts(c, w):
    w_arr = np.asarray(w, dtype=float)
    scalar = w_arr.ndim == 0
    w_arr = np.atleast_1d(w_arr)
    if not c.superlinear:
        raise DomainError("cost is not superlinear, so its conjugate is +inf")
    if c.closed_form:
        val, arg = _closed_form_parts(c, w_arr)
    else:
        hv, hc = c.hull()
        slopes = np.diff(hc) / np.diff(hv)
        j = np.searchsorted(slopes, w_arr, side="left")
        val = w_arr * hv[j] - hc[j]
        arg = hv[j].astype(float)
        vn, cn = c.knots_v[-1], c.knots_c[-1]
        if isinstance(c.tail, CostFunction):
            tval, targ = _closed_form_parts(c.tail, w_arr)
            better = (targ > vn) & (tval > val)
            val = np.where(better, tval, val)
            arg = np.where(better, targ, arg)
        elif c.tail == "quadratic":
            d = np.maximum(w_arr - c.tail_slope, 0.0) / c.tail_curvature
            tval = w_arr * vn - cn + 0.5 * c.tail_curvature * d * d
            better = (d > 0) & (tval > val)
            val = np.where(better, tval, val)
            arg = np.where(better, vn + d, arg)
    if scalar:
        return float(val[0]), float(arg[0])
    return val, arg


def conjugate(c, w):
    """``c*(w) = sup_{v >= 0} (w v - c(v))`` for scalar or array ``w``."""
    return _conjugate_parts(c, w)[0]


def biconjugate(c):
    """Largest convex minorant ``c**`` of ``c``; convex closed forms come back unchanged."""
    if not c.superlinear:
        raise DomainError("cost is not superlinear, so its biconjugate is not superlinear")
    if c.closed_form:
        return c
    hv, hc = c.hull()
    if not isinstance(c.tail, CostFunction):
        return replace(c, knots_v=_frozen(hv), knots_c=_frozen(hc))
    hv, hc = _attach_tangent(hv, hc, c.tail, float(c.knots_v[-1]))
    return replace(c, knots_v=_frozen(hv), knots_c=_frozen(hc))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _attach_tangent(hv, hc, tail, vn):
    """Join the hull of the knots to a closed-form tail by a supporting tangent."""
    _, dtail = _closed_form_derivative(tail)
    for i in range(hv.size):
        pv, pc = hv[i], hc[i]

        def gap(x):
            return dtail(x) * (x - pv) - (tail.evaluate(x) - pc)

        lo = max(vn, pv)
        if gap(lo) >= 0:
            x = lo
        else:
            hi = max(1.0, 2.0 * lo)
            while gap(hi) < 0:
                hi *= 2.0
            x = brentq(gap, lo, hi, xtol=1e-14, rtol=1e-15)
        slope = dtail(x) if x > lo or gap(lo) == 0 else (tail.evaluate(x) - pc) / (x - pv)
        line = pc + slope * (hv - pv)
        if np.all(hc >= line - 1e-12):
            v_out = np.append(hv[: i + 1], x) if x > pv else hv[: i + 1]
            c_out = np.append(hc[: i + 1], tail.evaluate(x)) if x > pv else hc[: i + 1]
            return v_out, c_out
    raise DomainError("could not attach the tail to the knot hull")


def _closed_form_derivative(c):
    if c.kind == "quadratic":
        return c, lambda x: x / c.gamma
    return c, lambda x: c.p * c.scale * x ** (c.p - 1.0)


def square_conjugate(c, a):
    """``sup_{u >= 0} (a u^2 - c(u))``, possibly ``inf``.

    This is the conjugate of ``v -> c(sqrt(v))`` and gives the generator of
    martingale transport penalties with cost ``phi(u) = c(|u|)``.
    """
    return power_conjugate(c, a, 2.0)


def power_conjugate(c, a, q):
    """``sup_{v >= 0} (a v^q - c(v))`` for ``q >= 1``, possibly ``inf``."""
    a, q = float(a), float(q)
    if q < 1:
        raise DomainError(f"power conjugate needs q >= 1, got {q}")
    if a <= 0:
        return -c.at_zero
    if c.closed_form:
        return _monomial_power_conjugate(*_monomial(c), a, q, 0.0)
    v, cv = c.knots_v, c.knots_c
    best = float(np.max(a * v ** q - cv))
    vn, cn, s, k = float(v[-1]), float(cv[-1]), c.tail_slope, c.tail_curvature
    if isinstance(c.tail, CostFunction):
        return max(best, _monomial_power_conjugate(*_monomial(c.tail), a, q, vn))
    if c.tail == "infinite":
        return best
    if c.tail == "linear":
        return math.inf
    if q > 2 or (q == 2 and a > 0.5 * k):
        return math.inf
    if q == 2:
        if a == 0.5 * k:
            return math.inf if 2.0 * a * vn - s > 0 else best
        d = max(0.0, (2.0 * a * vn - s) / (k - 2.0 * a))
        return max(best, a * (vn + d) ** 2 - (cn + s * d + 0.5 * k * d * d))
    gain = lambda d: a * (vn + d) ** q - (cn + s * d + 0.5 * k * d * d)
    reach = 1.0
    while gain(reach) > best - 1.0 or reach < vn + 1.0:
        reach *= 2.0
    d = np.linspace(0.0, reach, 4001)
    i = int(np.argmax(gain(d)))
    lo, hi = d[max(i - 1, 0)], d[min(i + 1, d.size - 1)]
    return max(best, gain(golden_max(gain, lo, hi)))


def _monomial(c):
    if c.kind == "quadratic":
        return 0.5 / c.gamma, 2.0
    return c.scale, c.p


def _monomial_power_conjugate(scale, r, a, q, floor):
    if r < q:
        return math.inf
    if r == q:
        return math.inf if a > scale else (a - scale) * floor ** q + 0.0
    v = (a * q / (scale * r)) ** (1.0 / (r - q))
    v = max(v, floor)
    return a * v ** q - scale * v ** r


def golden_max(fn, lo, hi, tol=1e-12, max_iter=200):
    """Maximizer of a unimodal scalar function on ``[lo, hi]`` by golden-section search."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fn(d)
    return c if fc >= fd else d


def is_convex(c, v_max=10.0, samples=2001, tol=1e-9):
    """Midpoint-convexity check of ``c`` on ``[0, v_max]``."""
    if c.closed_form:
        return True
    v = np.linspace(0.0, v_max, samples)
    vals = np.asarray(c.evaluate(v))
    finite = np.isfinite(vals)
    vals = vals[finite]
    if vals.size < 3:
        return True
    return bool(np.all(vals[:-2] + vals[2:] - 2.0 * vals[1:-1] >= -tol)) and _knots_convex(c, tol)


def _knots_convex(c, tol):
    v, cv = c.knots_v, c.knots_c
    if v.size < 3:
        return True
    slopes = np.diff(cv) / np.diff(v)
    return bool(np.all(np.diff(slopes) >= -tol * max(1.0, float(np.max(np.abs(slopes))))))
