"""Iterated one-step operators ``I_{t/n}^n f`` and convergence studies.

Every run lives on the fixed grid of its terminal function.  The region
``|x| <= trust_radius`` is the part of the grid that boundary extension cannot
reach within the run: stochastic spreads (Gaussian increments, dilations)
combine in quadrature over the steps, drift-like displacements add linearly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import poisson

from riskgen.errors import DomainError, WindowTooNarrowError
from riskgen.onestep import FIRST_ORDER, _crossing, apply_I, dilation_scan
from riskgen.reference import discretize_mu

TAIL_MASS = 1e-9


@dataclass(frozen=True, eq=False)
class ChernoffRun:
    t: float
    n: int
    spec: object
    model: object
    trajectory: tuple
    trust_radius: float

    @property
    def final(self):
        return self.trajectory[-1][1]

    @property
    def h(self):
        return self.t / self.n

    def snapshot(self, step):
        for k, g in self.trajectory:
            if k == step:
                return g
        raise KeyError(step)


def snapshot_steps(n):
    return sorted({0, n // 4, n // 2, (3 * n) // 4, n})


def _displacement_speed(spec, f, omega, t):
    """Largest useful first-order speed ``|u| / h`` for iterates of ``f``."""
    L = f.lipschitz() * math.exp(omega * t)
    if L == 0.0:
        return 0.0
    return _crossing(lambda v: spec.phi.evaluate(v) - L * v)


def _static_spread(model, h, n, f):
    """Half-width beyond which ``n`` reference steps carry less than ``TAIL_MASS``."""
    t = n * h
    if model.kind == "gaussian":
        return model.truncation * math.sqrt(model.s0 * t)
    if model.kind == "scaled_fixed":
        return t * float(np.max(np.abs(model.base.points)))
    jumps = poisson.isf(TAIL_MASS, model.rate * t)
    return float(jumps + 1) * float(np.max(np.abs(model.jumps.points)))


def iterate(spec, model, t, n, f, R=None):
    """Apply ``I_{t/n}`` to ``f`` exactly ``n`` times, keeping snapshots at quarter steps."""
    if n < 1 or int(n) != n:
        raise DomainError(f"step count must be a positive integer, got {n}")
    n = int(n)
    h = t / n
    spec.check_horizon(h)
    if model.kind == "gaussian" and model.step is None:
        # increments on the grid lattice keep every step on the fast aligned path
        model = model.with_step(f.dx)
    edge = min(-f.xmin, f.xmax)
    drift = t * model.drift.sup_on(f.xmin, f.xmax) if model.moves_points else 0.0
    if spec.kind in FIRST_ORDER:
        drift += t * _displacement_speed(spec, f, model.omega, t)
    spread_sq = _static_spread(model, h, n, f) ** 2
    if R is not None:
        _check_room(R, edge - drift - math.sqrt(spread_sq))
    keep = set(snapshot_steps(n))
    trajectory = [(0, f)]
    mu = discretize_mu(model, h)
    current = f
    dilation_sq = 0.0
    for k in range(1, n + 1):
        if spec.kind in FIRST_ORDER:
            current = apply_I(spec, model, h, current)
        else:
            vals, theta = dilation_scan(spec, model, h, current, mu)
            dilation_sq += float(np.max(theta)) ** 2
            current = current.with_values(vals)
        if k in keep:
            trajectory.append((k, current))
    spread = math.sqrt(spread_sq + (model.truncation ** 2) * dilation_sq)
    trust = edge - drift - spread
    if R is not None:
        _check_room(R, trust)
    return ChernoffRun(t, n, spec, model, tuple(trajectory), trust)


def _check_room(R, trust):
    if R > trust:
        raise WindowTooNarrowError(
            f"requested |x| <= {R:g} but only |x| <= {trust:g} is unaffected by the grid boundary; "
            f"widen the grid by {R - trust:g} on each side",
            required_widening=R - trust,
        )


@dataclass(frozen=True)
class ConvergenceTable:
    ns: tuple
    errors: tuple
    trust_radius: float
    radius: float
    slack: float = 0.1

    @property
    def monotone(self):
        e = self.errors
        return all(b <= (1.0 + self.slack) * a for a, b in zip(e, e[1:]))

    @property
    def reduction(self):
        return self.errors[-1] / self.errors[0] if self.errors[0] > 0 else 0.0

    def rows(self):
        return list(zip(self.ns, self.errors))


def convergence_study(spec, model, t, ns, f, comparator, R):
    """Sup-distance on ``|x| <= R`` between ``I_{t/n}^n f`` and ``comparator`` for each ``n``."""
    if not comparator.same_grid(f):
        raise DomainError("comparator must live on the grid of the terminal function")
    errors, trust = [], math.inf
    mask = f.window(R)
    for n in ns:
        run = iterate(spec, model, t, n, f, R=R)
        trust = min(trust, run.trust_radius)
        errors.append(float(np.max(np.abs(run.final.values - comparator.values)[mask])))
    return ConvergenceTable(tuple(int(n) for n in ns), tuple(errors), trust, R)


def composition_gap(spec, model, t, n, f, R):
    """Half-horizon consistency: ``(gap, scheme_error)`` on ``|x| <= R``.

    ``gap`` compares ``iterate(t, 2n)`` with two runs of ``iterate(t/2, n)``;
    ``scheme_error`` compares ``iterate(t, n)`` with ``iterate(t, 2n)``.
    """
    mask = f.window(R)
    full = iterate(spec, model, t, 2 * n, f, R=R).final
    half = iterate(spec, model, t / 2.0, n, f).final
    composed = iterate(spec, model, t / 2.0, n, half).final
    coarse = iterate(spec, model, t, n, f, R=R).final
    gap = float(np.max(np.abs(full.values - composed.values)[mask]))
    err = float(np.max(np.abs(full.values - coarse.values)[mask]))
    return gap, err
