"""Independent approximations of the limiting control semigroups.

* ``hjb_solve``: explicit monotone finite differences for
  ``u_t = (s0/2) u_xx + F u_x + jumps + g(u_x)`` or ``... + G(u_xx)``.
* ``entropic_oracle``: exponential tilting for the quadratic first-order case.
* ``variance_scan_oracle``: constant-volatility scan for convex terminals.
* ``mc_drift_lower_bound``: Monte Carlo values of feedback drift controls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp, ndtr

from riskgen.errors import ConfigError, DomainError, StabilityError
from riskgen.genlab import _golden_max_vec
from riskgen.reference import GridFunction, ReferenceModel

CFL_LIMIT = 0.9
Z_HALF_WIDTH = 8.0
Z_POINTS = 4001
CHUNK = 4_000_000
REFINE_Z_POINTS = 2001
REFINE_ITERS = 30


# Hamilton-Jacobi-Bellman finite differences


@dataclass(frozen=True, eq=False)
class HjbProblem:
    """Terminal-value problem for the first- or second-order control equation.

    The Hamiltonian is sampled at increasing ``nodes`` and extended linearly
    beyond them with the end slopes.
    """

    order: str
    nodes: np.ndarray
    hamiltonian: np.ndarray
    model: ReferenceModel
    terminal: GridFunction
    t: float
    dt: float | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        ham = np.asarray(self.hamiltonian, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "hamiltonian", ham)
        if self.order not in ("first", "second"):
            raise DomainError(f"order must be 'first' or 'second', got {self.order!r}")
        if nodes.ndim != 1 or nodes.size < 2 or nodes.shape != ham.shape:
            raise DomainError("hamiltonian needs at least two samples matching its nodes")
        if np.any(np.diff(nodes) <= 0):
            raise DomainError("hamiltonian nodes must be strictly increasing")
        if not np.all(np.isfinite(ham)):
            raise DomainError("hamiltonian samples must be finite")
        slopes = np.diff(ham) / np.diff(nodes)
        scale = 1e-9 * max(1.0, float(np.max(np.abs(slopes))))
        if np.any(np.diff(slopes) < -scale):
            raise DomainError("hamiltonian samples are not convex")
        if self.order == "second" and np.any(slopes < -scale):
            raise DomainError("second-order hamiltonian must be nondecreasing")
        if not self.t >= 0:
            raise DomainError(f"horizon must be nonnegative, got {self.t}")
        if self.dt is not None and not self.dt > 0:
            raise DomainError("time step must be positive")

    @classmethod
    def from_penalty(cls, spec, model, terminal, t, span=None, points=2001, dt=None):
        """Sample the analytic generator of ``spec`` on ``[-span, span]``.

        The default span covers twice the slope (first order) or curvature
        (second order, capped at 25) of the terminal.  Beyond it the linear
        extension only acts in the initial smoothing layer.
        """
        if span is None:
            if spec.order == "first":
                span = 2.0 * terminal.lipschitz() + 1.0
            else:
                span = min(2.0 * terminal.second_difference_bound() + 1.0, 25.0)
        nodes = np.linspace(-span, span, points)
        ham = np.array([spec.limit(z) for z in nodes])
        if not np.all(np.isfinite(ham)):
            raise DomainError("generator is infinite on the sampled range; narrow the span")
        return cls(spec.order, nodes, ham, model, terminal, t, dt)

    def H(self, z):
        z = np.asarray(z, dtype=float)
        nodes, ham = self.nodes, self.hamiltonian
        left = (ham[1] - ham[0]) / (nodes[1] - nodes[0])
        right = (ham[-1] - ham[-2]) / (nodes[-1] - nodes[-2])
        out = np.interp(z, nodes, ham)
        out = np.where(z < nodes[0], ham[0] + left * (z - nodes[0]), out)
        return np.where(z > nodes[-1], ham[-1] + right * (z - nodes[-1]), out)

    @property
    def lipschitz(self):
        return float(np.max(np.abs(np.diff(self.hamiltonian) / np.diff(self.nodes))))

    def with_terminal(self, terminal, t=None):
        return replace(self, terminal=terminal, t=self.t if t is None else t)


def _drift_field(model, x):
    F = model.drift(x) if model.scheme == "euler" else np.zeros_like(x)
    return F + model.linear_drift


def _viscosity(problem):
    """Diffusion coefficient of the scheme; Lax-Friedrichs viscosity keeps it monotone."""
    s0 = problem.model.diffusion
    if problem.order == "second":
        return 0.5 * s0
    return max(0.5 * s0, 0.5 * problem.lipschitz * problem.terminal.dx)


def cfl_number(problem, dt):
    dx = problem.terminal.dx
    F = np.abs(_drift_field(problem.model, problem.terminal.x)).max()
    rate = problem.model.jump_rate
    if problem.order == "first":
        diag = 2.0 * _viscosity(problem) / dx**2
    else:
        diag = (problem.model.diffusion + 2.0 * problem.lipschitz) / dx**2
    return dt * (diag + F / dx + rate)


def _time_step(problem):
    if problem.dt is not None:
        cfl = cfl_number(problem, problem.dt)
        if cfl > CFL_LIMIT:
            raise StabilityError(
                f"CFL number {cfl:.3g} exceeds {CFL_LIMIT}; reduce dt below "
                f"{problem.dt * CFL_LIMIT / cfl:.3g}"
            )
        return problem.dt
    unit = cfl_number(problem, 1.0)
    return CFL_LIMIT / unit if unit > 0 else math.inf


def hjb_solve(problem):
    """Explicit Euler in time from the terminal over the horizon ``t``.

    Central differences feed the Hamiltonian, the drift is upwinded and the
    jump term integrates against the jump law with constant extension.
    """
    f = problem.terminal
    if problem.t == 0:
        return f
    dt = _time_step(problem)
    steps = max(1, int(math.ceil(problem.t / dt - 1e-12)))
    dt = problem.t / steps
    x, dx = f.x, f.dx
    F = _drift_field(problem.model, x)
    Fp, Fm = np.maximum(F, 0.0), np.maximum(-F, 0.0)
    D = _viscosity(problem)
    law, rate = problem.model.jump_law, problem.model.jump_rate
    u = f.values.copy()
    for _ in range(steps):
        up = np.concatenate(([u[0]], u, [u[-1]]))
        fwd = (up[2:] - u) / dx
        bwd = (u - up[:-2]) / dx
        second = (fwd - bwd) / dx
        rhs = Fp * fwd - Fm * bwd
        if problem.order == "first":
            rhs += D * second + problem.H(0.5 * (fwd + bwd))
        else:
            rhs += D * second + problem.H(second)
        if rate > 0:
            shifted = np.interp(x[:, None] + law.points[None, :], x, u)
            rhs += rate * (shifted @ law.weights - u)
        u = u + dt * rhs
    return f.with_values(u)


def hjb_composition_gap(problem, R):
    """``(gap, scheme_error)`` on ``|x| <= R``.

    ``gap`` compares one solve over ``t`` with two solves over ``t/2``;
    ``scheme_error`` compares the solve with one on the grid of double spacing.
    """
    f = problem.terminal
    mask = f.window(R)
    full = hjb_solve(problem)
    half = hjb_solve(problem.with_terminal(f, problem.t / 2.0))
    composed = hjb_solve(problem.with_terminal(half, problem.t / 2.0))
    coarse_f = GridFunction(f.xmin, 2.0 * f.dx, f.values[::2].copy(), f.bound)
    coarse = hjb_solve(replace(problem, terminal=coarse_f, dt=None))
    gap = float(np.max(np.abs(full.values - composed.values)[mask]))
    err = float(np.max(np.abs(full.values - coarse(f.x))[mask]))
    return gap, err


# Gaussian smoothing shared by the closed-form oracles


def _standard_normal_lattice(points=Z_POINTS, half_width=Z_HALF_WIDTH):
    """Standard normal quantized by CDF differences on a uniform lattice."""
    z = np.linspace(-half_width, half_width, points)
    step = z[1] - z[0]
    edges = np.concatenate(([-np.inf], z[:-1] + 0.5 * step, [np.inf]))
    mass = np.diff(ndtr(edges))
    mass = 0.5 * (mass + mass[::-1])
    return z, mass / mass.sum()


def _gaussian_average(f, x, sigma, transform=None, points=Z_POINTS):
    """``E f(x + sigma Z)`` per entry of ``x``; ``sigma`` broadcasts against ``x``."""
    z, w = _standard_normal_lattice(points)
    x = np.asarray(x, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), x.shape)
    out = np.empty(x.shape)
    chunk = max(1, CHUNK // z.size)
    for s in range(0, x.size, chunk):
        vals = f(x[s:s + chunk, None] + sigma[s:s + chunk, None] * z[None, :])
        out[s:s + chunk] = vals @ w if transform is None else transform(vals, w)
    return out


def _lattice_heat(f, sigma):
    """``E f(x + sigma Z)`` at the nodes with ``Z`` quantized on the grid lattice."""
    half = int(math.ceil(Z_HALF_WIDTH * sigma / f.dx))
    edges = (np.arange(-half, half + 2) - 0.5) * f.dx / sigma
    mass = np.diff(ndtr(edges))
    mass = 0.5 * (mass + mass[::-1])
    padded = np.concatenate((np.full(half, f.values[0]), f.values, np.full(half, f.values[-1])))
    return np.convolve(padded, mass / mass.sum(), mode="valid")


def _gaussian_s0(model_or_s0):
    if isinstance(model_or_s0, ReferenceModel):
        model = model_or_s0
        if model.kind != "gaussian":
            raise DomainError("closed-form oracles need a gaussian reference model")
        if model.moves_points:
            raise DomainError("closed-form oracles need zero drift")
        return model.s0
    s0 = float(model_or_s0)
    if not s0 > 0:
        raise DomainError(f"s0 must be positive, got {s0}")
    return s0


def heat_value(s0, t, f):
    """``E f(x + sqrt(s0 t) Z)`` on the grid of ``f``."""
    return f.with_values(_gaussian_average(f, f.x, math.sqrt(s0 * t)))


def entropic_oracle(model_or_s0, gamma, t, f):
    """``(s0/gamma) log E exp((gamma/s0) f(x + sqrt(s0 t) Z))``.

    Solves ``u_t = (s0/2) u_xx + (gamma/2) u_x^2``, the control equation for
    ``phi(b) = b^2 / (2 gamma)`` without drift.
    """
    s0 = _gaussian_s0(model_or_s0)
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    if t == 0:
        return f
    k = gamma / s0
    tilt = lambda vals, w: logsumexp(k * vals, axis=1, b=w[None, :]) / k
    return f.with_values(_gaussian_average(f, f.x, math.sqrt(s0 * t), tilt))


def _is_convex_grid(f, tol=1e-10):
    second = f.values[2:] - 2.0 * f.values[1:-1] + f.values[:-2]
    return bool(np.all(second >= -tol * max(1.0, float(np.max(np.abs(f.values))))))


def variance_scan_oracle(s0, phi, t, f, return_argmax=False, points=400):
    """``max_v [heat value of f at variance (s0 + 2v) t] - t phi(v)`` per grid point.

    Scans ``points`` values of ``v`` up to the level where ``t phi(v)`` exceeds
    the oscillation of ``f``, then refines each maximizer by golden section.
    """
    s0 = _gaussian_s0(s0)
    if not _is_convex_grid(f):
        raise DomainError("variance scan needs a convex terminal")
    if t == 0:
        return (f, np.zeros(f.size)) if return_argmax else f
    osc = f.oscillation()
    v_max = float(phi.level(osc / t)) if osc > 0 else 0.0
    if v_max == 0.0:
        best, arg = _lattice_heat(f, math.sqrt(s0 * t)), np.zeros(f.size)
    else:
        vs = np.linspace(0.0, v_max, points)
        scores = np.stack([_lattice_heat(f, math.sqrt((s0 + 2.0 * v) * t)) - t * phi.evaluate(v)
                           for v in vs], axis=1)
        k = np.argmax(scores, axis=1)
        rows = np.arange(f.size)
        lo, hi = vs[np.maximum(k - 1, 0)], vs[np.minimum(k + 1, points - 1)]
        value = lambda v: (_gaussian_average(f, f.x, np.sqrt((s0 + 2.0 * v) * t), points=REFINE_Z_POINTS)
                           - t * phi.evaluate(v))
        refined = _golden_max_vec(value, lo, hi, iters=REFINE_ITERS)
        best = np.maximum(scores[rows, k], refined)
        arg = np.where(refined > scores[rows, k], 0.5 * (lo + hi), vs[k])
    out = f.with_values(best)
    return (out, arg) if return_argmax else out


# Monte Carlo drift control


@dataclass(frozen=True)
class MonteCarloBound:
    x: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    best_control: np.ndarray
    control_values: np.ndarray
    control_stderr: np.ndarray
    paths: int
    seed: int


def _as_feedback(control):
    if callable(control):
        return control
    c = float(control)
    return lambda x: np.full_like(x, c)


def mc_drift_lower_bound(model, phi, t, f, controls, paths, seed, x_points=None, steps=50):
    """Best empirical ``E[f(X_t) - int phi(beta(X_s)) ds]`` over feedback controls.

    Every control sees the same Brownian increments and jumps, so differences
    between controls are not blurred by sampling noise.
    """
    if seed is None:
        raise ConfigError("Monte Carlo runs need an explicit seed", field="seed")
    if paths < 10_000:
        raise DomainError(f"at least 10^4 paths are required, got {paths}")
    if steps < 50:
        raise DomainError(f"at least 50 Euler steps are required, got {steps}")
    if model.kind == "scaled_fixed":
        raise DomainError("Monte Carlo drift control needs a gaussian or compound Poisson model")
    if not controls:
        raise DomainError("at least one feedback control is required")
    x0 = np.asarray(f.x if x_points is None else x_points, dtype=float)
    controls = [_as_feedback(c) for c in controls]
    dt = t / steps
    s0 = model.diffusion
    law, rate = model.jump_law, model.jump_rate
    noise_rng, jump_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    X = np.repeat(x0[:, None], paths, axis=1)
    states = [X.copy() for _ in controls]
    running = [np.zeros_like(X) for _ in controls]
    for _ in range(steps):
        dW = noise_rng.standard_normal(X.shape) * math.sqrt(s0 * dt) if s0 > 0 else 0.0
        jump = 0.0
        if rate > 0:
            counts = jump_rng.poisson(rate * dt, size=X.shape)
            jump = np.zeros(X.shape)
            for k in range(int(counts.max())):
                hit = counts > k
                jump[hit] += jump_rng.choice(law.points, size=int(hit.sum()), p=law.weights)
        for i, beta in enumerate(controls):
            Y = states[i]
            b = beta(Y)
            running[i] += phi.evaluate(np.abs(b)) * dt
            F = _drift_field(model, Y)
            states[i] = Y + (b + F) * dt + dW + jump
    payoff = np.stack([f(states[i]) - running[i] for i in range(len(controls))])
    means = payoff.mean(axis=2)
    ses = payoff.std(axis=2, ddof=1) / math.sqrt(paths)
    best = np.argmax(means, axis=0)
    cols = np.arange(x0.size)
    return MonteCarloBound(x0, means[best, cols], ses[best, cols], best, means, ses, paths, seed)


# gate for the closed-form oracles


@dataclass(frozen=True)
class GateResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return self.error <= self.tolerance


def _bump(x, center=0.0, width=1.0, height=1.0):
    return height * np.exp(-((x - center) / width) ** 2)


GATE_SCENARIOS = (
    ("sin, s0=1, gamma=1, t=0.5", 1.0, 1.0, 0.5, np.sin),
    ("bump, s0=0.5, gamma=2, t=0.25", 0.5, 2.0, 0.25, lambda x: _bump(x, 0.3, 0.8, 1.5)),
)


def oracle_gate(R=2.0, xmax=8.0, dx=0.02, tol=1e-2):
    """Entropic oracle against the first-order HJB solver on the fixed scenarios."""
    from riskgen.conjugate import CostFunction
    from riskgen.onestep import PenaltySpec

    results = []
    for name, s0, gamma, t, fn in GATE_SCENARIOS:
        f = GridFunction.sample(fn, -xmax, xmax, dx)
        model = ReferenceModel.gaussian(s0)
        spec = PenaltySpec("ot", CostFunction.quadratic(gamma))
        hjb = hjb_solve(HjbProblem.from_penalty(spec, model, f, t))
        oracle = entropic_oracle(s0, gamma, t, f)
        err = float(np.max(np.abs(hjb.values - oracle.values)[f.window(R)]))
        results.append(GateResult(name, err, tol))
    return results
