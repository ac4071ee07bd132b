"""Reference transition family ``(psi_h, mu_h)``, grid functions and the linear operators ``P_h``.

``(P_h f)(x) = sum_y f(psi_h(x) + y) mu_h({y})`` where ``f`` is read off its
grid by linear interpolation and extended by constants beyond the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import ndtr
from scipy.stats import poisson

from riskgen.errors import DomainError
from riskgen.measures import DiscreteMeasure

LATTICE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of a bounded function on the uniform grid ``xmin + i dx``."""

    xmin: float
    dx: float
    values: np.ndarray
    bound: float | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if not self.dx > 0:
            raise DomainError(f"grid step dx must be positive, got {self.dx}")
        if v.size < 3:
            raise DomainError("a grid function needs at least 3 points")
        if not np.all(np.isfinite(v)):
            raise DomainError("grid function values must be finite")
        sup = float(np.max(np.abs(v)))
        bound = sup if self.bound is None else float(self.bound)
        if sup > bound * (1 + 1e-12) + 1e-12:
            raise DomainError(f"values exceed the declared bound {bound}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "bound", bound)
        object.__setattr__(self, "xmin", float(self.xmin))
        object.__setattr__(self, "dx", float(self.dx))

    @classmethod
    def sample(cls, fn, xmin, xmax, dx):
        n = int(round((xmax - xmin) / dx)) + 1
        x = xmin + dx * np.arange(n)
        return cls(xmin, dx, fn(x))

    @property
    def size(self):
        return self.values.size

    @property
    def xmax(self):
        return self.xmin + self.dx * (self.size - 1)

    @property
    def x(self):
        return self.xmin + self.dx * np.arange(self.size)

    def __call__(self, pts):
        """Linear interpolation with constant extension beyond the grid."""
        return np.interp(pts, self.x, self.values)

    def with_values(self, values):
        return GridFunction(self.xmin, self.dx, values)

    def same_grid(self, other):
        return (self.size == other.size and abs(self.xmin - other.xmin) <= 1e-12 * max(1.0, abs(self.xmin))
                and abs(self.dx - other.dx) <= 1e-15 * max(1.0, self.dx) * self.size)

    def window(self, radius):
        """Boolean mask of nodes with ``|x| <= radius``."""
        return np.abs(self.x) <= radius + 1e-12 * max(1.0, radius)

    def oscillation(self):
        return float(self.values.max() - self.values.min())

    def lipschitz(self):
        return float(np.max(np.abs(np.diff(self.values)))) / self.dx

    def second_difference_bound(self):
        """Largest second difference quotient, counting the kinks of the constant extension."""
        v = np.concatenate(([self.values[0]], self.values, [self.values[-1]]))
        return float(np.max(np.abs(v[2:] - 2.0 * v[1:-1] + v[:-2]))) / self.dx ** 2


def shift_nodes(values, k):
    """``values[i + k]`` with constant extension past either end."""
    n = values.size
    if k == 0:
        return values.copy()
    idx = np.clip(np.arange(n) + k, 0, n - 1)
    return values[idx]


@dataclass(frozen=True, eq=False)
class Drift:
    kind: str = "zero"
    slope: float = 0.0
    intercept: float = 0.0
    xs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ys: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def linear(cls, slope, intercept=0.0):
        return cls("linear", slope=float(slope), intercept=float(intercept))

    @classmethod
    def tabulated(cls, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.size < 2 or xs.shape != ys.shape or np.any(np.diff(xs) <= 0):
            raise DomainError("tabulated drift needs increasing abscissae and matching values")
        return cls("tabulated", xs=xs, ys=ys)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "linear":
            return self.intercept + self.slope * x
        return np.interp(x, self.xs, self.ys)

    @property
    def lipschitz(self):
        if self.kind == "zero":
            return 0.0
        if self.kind == "linear":
            return abs(self.slope)
        return float(np.max(np.abs(np.diff(self.ys) / np.diff(self.xs))))

    def sup_on(self, lo, hi):
        if self.kind == "zero":
            return 0.0
        pts = np.concatenate([[lo, hi], self.xs[(self.xs > lo) & (self.xs < hi)]])
        return float(np.max(np.abs(self(pts))))


@dataclass(frozen=True, eq=False)
class ReferenceModel:
    """Reference increments ``mu_h`` plus the map ``psi_h``.

    ``kind`` is ``"gaussian"`` (``N(0, s0 h)``), ``"compound_poisson"``
    (driftless jumps at ``rate`` from ``jumps``) or ``"scaled_fixed"``
    (``base`` scaled by ``h``).  Gaussian increments are quantized on the
    lattice ``step * Z`` (default ``sigma / 50``) over ``+-truncation sigma``.
    """

    kind: str
    s0: float = 0.0
    rate: float = 0.0
    jumps: DiscreteMeasure | None = None
    base: DiscreteMeasure | None = None
    drift: Drift = field(default_factory=Drift.zero)
    scheme: str = "euler"
    truncation: float = 6.0
    step: float | None = None
    max_convolutions: int = 4

    def __post_init__(self):
        if self.kind == "gaussian":
            if not self.s0 > 0:
                raise DomainError(f"gaussian increments need s0 > 0, got {self.s0}")
        elif self.kind == "compound_poisson":
            if not self.rate > 0 or self.jumps is None:
                raise DomainError("compound Poisson increments need rate > 0 and a jump law")
        elif self.kind == "scaled_fixed":
            if self.base is None:
                raise DomainError("scaled increments need a base law")
        else:
            raise DomainError(f"unknown increment family {self.kind!r}")
        if self.scheme not in ("euler", "identity"):
            raise DomainError(f"unknown psi scheme {self.scheme!r}")
        if not self.truncation > 0:
            raise DomainError("truncation must be positive")
        if self.step is not None and not self.step > 0:
            raise DomainError("quantization step must be positive")

    @classmethod
    def gaussian(cls, s0, drift=None, scheme="euler", truncation=6.0, step=None):
        return cls("gaussian", s0=float(s0), drift=drift or Drift.zero(), scheme=scheme,
                   truncation=truncation, step=step)

    @classmethod
    def compound_poisson(cls, rate, jumps, drift=None, scheme="euler"):
        return cls("compound_poisson", rate=float(rate), jumps=jumps,
                   drift=drift or Drift.zero(), scheme=scheme)

    @classmethod
    def scaled_fixed(cls, base, drift=None, scheme="euler"):
        return cls("scaled_fixed", base=base, drift=drift or Drift.zero(), scheme=scheme)

    @property
    def omega(self):
        return self.drift.lipschitz if self.scheme == "euler" else 0.0

    @property
    def moves_points(self):
        return self.scheme == "euler" and self.drift.kind != "zero"

    def psi(self, x, h):
        x = np.asarray(x, dtype=float)
        if self.scheme == "identity":
            return x
        return x + h * self.drift(x)

    # limiting generator data used by the control oracles

    @property
    def diffusion(self):
        return self.s0 if self.kind == "gaussian" else 0.0

    @property
    def jump_law(self):
        return self.jumps if self.kind == "compound_poisson" else None

    @property
    def jump_rate(self):
        return self.rate if self.kind == "compound_poisson" else 0.0

    @property
    def linear_drift(self):
        """Constant drift contributed by the increments (nonzero only for scaled laws)."""
        return self.base.mean() if self.kind == "scaled_fixed" else 0.0

    def with_step(self, step):
        return ReferenceModel(self.kind, self.s0, self.rate, self.jumps, self.base, self.drift,
                              self.scheme, self.truncation, step, self.max_convolutions)


def discretize_mu(model, h):
    """The increment law ``mu_h`` as a finite measure."""
    if not h > 0:
        raise DomainError(f"step h must be positive, got {h}")
    if model.kind == "gaussian":
        return _gaussian_increments(model, h)
    if model.kind == "scaled_fixed":
        return model.base.scaled(h)
    return _compound_poisson_increments(model, h)


def _gaussian_increments(model, h):
    sigma = math.sqrt(model.s0 * h)
    step = model.step if model.step is not None else sigma / 50.0
    half = int(math.floor(model.truncation * sigma / step + 1e-9))
    if half < 1:
        raise DomainError(f"truncation window {model.truncation * sigma:g} is narrower than one step {step:g}")
    k = np.arange(-half, half + 1)
    edges = (np.arange(-half, half + 2) - 0.5) * step / sigma
    cdf = ndtr(edges)
    mass = np.diff(cdf)
    mass = 0.5 * (mass + mass[::-1])
    mass /= mass.sum()
    return DiscreteMeasure(k * step, mass / mass.sum())


def _compound_poisson_increments(model, h):
    lam = model.rate * h
    kmax = model.max_convolutions
    probs = poisson.pmf(np.arange(kmax + 1), lam)
    pts = [np.array([0.0])]
    wts = [np.array([probs[0]])]
    conv = DiscreteMeasure.dirac(0.0)
    for k in range(1, kmax + 1):
        conv = DiscreteMeasure.from_atoms(
            (conv.points[:, None] + model.jumps.points[None, :]).ravel(),
            (conv.weights[:, None] * model.jumps.weights[None, :]).ravel(),
            normalize=True,
        )
        pts.append(conv.points)
        wts.append(probs[k] * conv.weights)
    pts = np.concatenate(pts)
    wts = np.concatenate(wts)
    wts[np.argmax(wts)] += 1.0 - wts.sum()
    mu = DiscreteMeasure.from_atoms(pts, wts)
    return DiscreteMeasure(mu.points, mu.weights / mu.weights.sum())


def lattice_offsets(mu, dx):
    """Integer offsets when every atom of ``mu`` sits on ``dx * Z``, else ``None``."""
    k = np.rint(mu.points / dx)
    if np.all(np.abs(mu.points / dx - k) <= LATTICE_TOL):
        return k.astype(int)
    return None


def apply_P(model, h, f):
    """``P_h f`` on the grid of ``f``."""
    return f.with_values(reference_values(model, h, f, discretize_mu(model, h)))


def reference_values(model, h, f, mu):
    """Values of ``sum_y f(psi_h(x) + y) mu({y})`` at the grid nodes of ``f``."""
    offsets = None if model.moves_points else lattice_offsets(mu, f.dx)
    if offsets is not None:
        return lattice_average(f.values, offsets, mu.weights)
    w = model.psi(f.x, h)
    out = np.zeros(f.size)
    chunk = max(1, 4_000_000 // f.size)
    for start in range(0, len(mu), chunk):
        y = mu.points[start:start + chunk]
        out += f(w[:, None] + y[None, :]) @ mu.weights[start:start + chunk]
    return out


def lattice_average(values, offsets, weights):
    """``sum_k weights_k values[i + offsets_k]`` with constant extension."""
    lo, hi = int(offsets.min()), int(offsets.max())
    pad_lo, pad_hi = max(0, -lo), max(0, hi)
    padded = np.pad(values, (pad_lo, pad_hi), mode="edge")
    kernel = np.zeros(hi - lo + 1)
    np.add.at(kernel, offsets - lo, weights)
    n = values.size
    full = np.convolve(padded, kernel[::-1], mode="valid")
    start = pad_lo + lo
    return full[start:start + n]


def transition_matrix(model, h, f, mu=None):
    """Sparse matrix ``Q`` with ``(P_h f)(x_i) = (Q @ f.values)_i``."""
    mu = discretize_mu(model, h) if mu is None else mu
    x = f.x
    w = np.clip(model.psi(x, h)[:, None] + mu.points[None, :], f.xmin, f.xmax)
    pos = (w - f.xmin) / f.dx
    j = np.clip(np.floor(pos).astype(int), 0, f.size - 2)
    frac = np.clip(pos - j, 0.0, 1.0)
    rows = np.repeat(np.arange(f.size), len(mu))
    wts = np.tile(mu.weights, f.size)
    data = np.concatenate([wts * (1.0 - frac.ravel()), wts * frac.ravel()])
    cols = np.concatenate([j.ravel(), j.ravel() + 1])
    Q = sparse.coo_matrix((data, (np.concatenate([rows, rows]), cols)), shape=(f.size, f.size))
    Q = Q.tocsr()
    Q.eliminate_zeros()
    return Q


@dataclass(frozen=True)
class ConditionReport:
    hs: tuple
    m_quotients: tuple
    tail_levels: tuple
    tail_quotients: tuple
    drift_defects: tuple
    verdicts: dict
    label: str = "numerical evidence"

    def as_dict(self):
        return {
            "label": self.label,
            "h": list(self.hs),
            "m_quotient": list(self.m_quotients),
            "tail_levels": list(self.tail_levels),
            "tail_quotient": [list(r) for r in self.tail_quotients],
            "drift_defect": list(self.drift_defects),
            "verdicts": dict(self.verdicts),
        }


def validate_conditions(model, hs, tail_levels=(1.0, 2.0, 5.0), tail_eps=0.05,
                        probe=(-5.0, 5.0), offset=1.0, tol=1e-9):
    """Scan the moment, tail and Euler conditions over a decreasing list of steps.

    Verdicts are ``"pass"`` or ``"fail"`` and only summarize trends seen on
    the supplied steps.
    """
    hs = tuple(float(h) for h in hs)
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise DomainError("step list must be strictly decreasing")
    mq, tq, dd, spread = [], [], [], []
    xs = np.linspace(probe[0], probe[1], 41)
    us = np.linspace(-offset, offset, 21)
    for h in hs:
        mu = discretize_mu(model, h)
        y, w = mu.points, mu.weights
        small = np.abs(y) <= 1.0
        second = float(np.dot(w, np.minimum(1.0, y * y)))
        spread.append(second)
        mq.append((second + abs(float(np.dot(w[small], y[small])))) / h)
        tq.append(tuple(float(w[np.abs(y) > m].sum()) / h for m in tail_levels))
        lhs = np.abs(model.psi(xs[:, None] + us[None, :], h) - model.psi(xs, h)[:, None] - us[None, :]) / h
        dd.append(float(np.max(lhs - model.omega * np.abs(us)[None, :])))
    growth = len(mq) > 1 and all(b > a for a, b in zip(mq, mq[1:])) and mq[-1] > 2.0 * max(mq[0], 1e-12)
    to_delta = all(b <= 1.1 * a + 1e-15 for a, b in zip(spread, spread[1:]))
    to_delta = to_delta and abs(float(model.psi(0.0, hs[-1]))) <= abs(float(model.psi(0.0, hs[0]))) + 1e-15
    verdicts = {
        "A": "pass" if to_delta else "fail",
        "M": "pass" if np.all(np.isfinite(mq)) and not growth else "fail",
        "T": "pass" if min(tq[-1]) <= tail_eps else "fail",
        "D": "pass" if max(dd) <= tol else "fail",
    }
    return ConditionReport(hs, tuple(mq), tuple(float(m) for m in tail_levels), tuple(tq),
                           tuple(dd), verdicts)
