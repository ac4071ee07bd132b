"""Risk generators extracted from one-step operators.

``g_h(m)`` is the best first-order gain ``m b - alpha_h`` over translations of
``mu_h`` by ``b``; ``G_h(a)`` is the best second-order gain
``a theta^2 / 2 - alpha_h`` over dilations of ``mu_h`` by ``theta``.  For the
implemented penalty families both ratios ``g_h / h`` and ``G_h / h`` are
constant in ``h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from riskgen.conjugate import golden_max
from riskgen.errors import DomainError
from riskgen.measures import dilation_measure
from riskgen.onestep import (
    FIRST_ORDER,
    MARTINGALE,
    _crossing,
    apply_I,
    dilation_penalty,
    penalty_value,
    shift_penalty,
)
from riskgen.reference import apply_P, discretize_mu

GRID_POINTS = 401
GOLDEN_TOL = 1e-10
# rates beyond this are not searched; keeps a * theta^2 rounding near 1e-11
RATE_CAP = 1e6


@dataclass(frozen=True)
class GeneratorEstimate:
    kind: str
    grid: np.ndarray
    hs: tuple
    scaled_values: np.ndarray
    limit: np.ndarray
    cauchy: np.ndarray

    @property
    def limit_convex(self):
        return _midpoint_convex(self.grid, self.limit)

    @property
    def rows_convex(self):
        return all(_midpoint_convex(self.grid, row) for row in self.scaled_values)


def _midpoint_convex(grid, values, tol=1e-8):
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    if finite.sum() < 3:
        return True
    x, v = grid[finite], values[finite]
    left = (x[2:] - x[1:-1]) / (x[2:] - x[:-2])
    chord = left * v[:-2] + (1.0 - left) * v[2:]
    return bool(np.all(v[1:-1] <= chord + tol))


def _shift_window(spec, h, m):
    phi = spec.phi
    gamma = _crossing(lambda v: phi.evaluate(v) - 1.0 - abs(m) * v, cap=RATE_CAP)
    return h * phi.level(2.0 + abs(m) * gamma)


def _dilation_window(spec, h, a):
    gamma = _crossing(lambda v: spec.rate_cost(v) - 1.0 - abs(a) * v, cap=RATE_CAP)
    return math.sqrt(2.0 * h * spec.rate_level(2.0 + abs(a) * gamma))


def _maximize(objective, top, lo=None):
    """Grid seed over ``[lo, top]`` followed by golden-section refinement."""
    lo = -top if lo is None else lo
    grid = np.linspace(lo, top, GRID_POINTS)
    scores = np.array([objective(x) for x in grid])
    k = int(np.argmax(scores))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    x = golden_max(objective, a, b, tol=GOLDEN_TOL)
    return max(float(scores[k]), float(objective(x)))


def compute_g_h(spec, model, h, m):
    """``g_h(m) = sup_b (m b - alpha_h(mu_h shifted by b))``."""
    if spec.kind not in FIRST_ORDER:
        raise DomainError("g_h is defined for first-order penalty kinds")
    spec.check_horizon(h)
    if m == 0:
        return 0.0
    mu = discretize_mu(model, h)
    objective = lambda b: m * b - penalty_value(spec, h, mu, mu.shifted(b))
    return _maximize(objective, _shift_window(spec, h, m))


def compute_G_h(spec, model, h, a, exact_penalty=False):
    """``G_h(a) = sup_theta (a theta^2 / 2 - alpha_h(mu_h dilated by theta))``.

    The dilation penalty has a closed form; ``exact_penalty=True`` solves the
    martingale LP for every candidate instead (small supports only).
    """
    if spec.kind not in MARTINGALE:
        raise DomainError("G_h is defined for martingale penalty kinds")
    spec.check_horizon(h)
    if a <= 0:
        return 0.0
    if not math.isfinite(spec.limit(a)):
        return math.inf
    if exact_penalty:
        mu = discretize_mu(model, h)
        objective = lambda t: 0.5 * a * t * t - penalty_value(spec, h, mu, dilation_measure(mu, t))
    else:
        objective = lambda t: 0.5 * a * t * t - dilation_penalty(spec, h, t)
    return _maximize(objective, _dilation_window(spec, h, a), lo=0.0)


def _golden_max_vec(fn, lo, hi, iters=90):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    best = np.full(lo.shape, -np.inf)
    for _ in range(iters):
        c, d = hi - g * (hi - lo), lo + g * (hi - lo)
        fc, fd = fn(c), fn(d)
        left = fc >= fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        best = np.maximum(best, np.maximum(fc, fd))
    return best


def _profile(gain, penalty, xs, start, stop):
    """Vectorized ``sup_s (gain(x, s) - penalty(s))`` over ``s`` in ``[start, stop]`` per ``x``."""
    grid = np.linspace(0.0, 1.0, GRID_POINTS)
    pts = start[:, None] + (stop - start)[:, None] * grid[None, :]
    scores = gain(xs[:, None], pts) - penalty(pts)
    k = np.argmax(scores, axis=1)
    rows = np.arange(xs.size)
    lo = pts[rows, np.maximum(k - 1, 0)]
    hi = pts[rows, np.minimum(k + 1, GRID_POINTS - 1)]
    refined = _golden_max_vec(lambda s: gain(xs, s) - penalty(s), lo, hi)
    return np.maximum(scores[rows, k], refined)


def g_h_profile(spec, model, h, ms):
    """``g_h`` on an array of slopes, using the closed-form translation penalty."""
    if spec.kind not in FIRST_ORDER:
        raise DomainError("g_h is defined for first-order penalty kinds")
    spec.check_horizon(h)
    ms = np.asarray(ms, dtype=float)
    top = np.array([_shift_window(spec, h, m) for m in ms])
    out = _profile(lambda m, b: m * b, lambda b: shift_penalty(spec, h, b), ms, -top, top)
    return np.where(ms == 0, 0.0, out)


def G_h_profile(spec, model, h, As):
    """``G_h`` on an array of curvatures, using the closed-form dilation penalty."""
    if spec.kind not in MARTINGALE:
        raise DomainError("G_h is defined for martingale penalty kinds")
    spec.check_horizon(h)
    As = np.asarray(As, dtype=float)
    pos = np.maximum(As, 0.0)
    finite = np.array([math.isfinite(spec.limit(a)) for a in pos])
    top = np.array([_dilation_window(spec, h, a) if ok else 0.0 for a, ok in zip(pos, finite)])
    out = _profile(lambda a, t: 0.5 * a * t * t, lambda t: dilation_penalty(spec, h, t),
                   pos, np.zeros_like(top), top)
    out = np.where(As <= 0, 0.0, out)
    return np.where(finite, out, np.inf)


def _residual(I, P, correction, h, f, R):
    mask = f.window(R)
    return float(np.max(np.abs(I.values - P.values - correction)[mask])) / h


def _profile_interp(profile_fn, spec, model, h, samples, points):
    lo, hi = float(samples.min()), float(samples.max())
    if hi - lo < 1e-12:
        grid = np.array([lo])
        return np.full(samples.shape, profile_fn(spec, model, h, grid)[0])
    grid = np.linspace(lo, hi, points)
    return np.interp(samples, grid, profile_fn(spec, model, h, grid))


def generator_residual_first(spec, model, h, f, df, R, profile_points=801):
    """``sup_{|x| <= R} |I_h f - P_h f - g_h(f')| / h`` with ``f'`` supplied on the grid.

    ``g_h`` is tabulated on ``profile_points`` slopes spanning the range of
    ``f'`` and interpolated linearly.
    """
    if spec.kind not in FIRST_ORDER:
        raise DomainError("first-order residual needs a first-order penalty kind")
    spec.check_horizon(h)
    df = np.asarray(df, dtype=float)
    I, P = apply_I(spec, model, h, f), apply_P(model, h, f)
    g = _profile_interp(g_h_profile, spec, model, h, df, profile_points)
    return _residual(I, P, g, h, f, R)


def generator_residual_second(spec, model, h, f, d2f, R, profile_points=801):
    """``sup_{|x| <= R} |I_h f - P_h f - G_h(f'')| / h`` with ``f''`` supplied on the grid."""
    if spec.kind not in MARTINGALE:
        raise DomainError("second-order residual needs a martingale penalty kind")
    spec.check_horizon(h)
    d2f = np.asarray(d2f, dtype=float)
    I, P = apply_I(spec, model, h, f), apply_P(model, h, f)
    G = _profile_interp(G_h_profile, spec, model, h, d2f, profile_points)
    return _residual(I, P, G, h, f, R)


def limit_profile(spec, model, hs, grid):
    """Table of ``g_h / h`` (or ``G_h / h``) over ``hs`` with Cauchy deviations and the analytic limit."""
    hs = tuple(float(h) for h in hs)
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise DomainError("step list must be strictly decreasing")
    grid = np.asarray(grid, dtype=float)
    first = spec.kind in FIRST_ORDER
    compute = compute_g_h if first else compute_G_h
    rows = np.array([[compute(spec, model, h, x) / h for x in grid] for h in hs])
    limit = np.array([spec.limit(x) for x in grid])
    with np.errstate(invalid="ignore"):
        cauchy = np.abs(np.diff(rows, axis=0)) if len(hs) > 1 else np.zeros((0, grid.size))
    kind = "first_order" if first else "second_order"
    return GeneratorEstimate(kind, grid, hs, rows, limit, cauchy)
