"""Robust one-step operators ``I_h f(x) = sup_nu (int f(psi_h(x) + z) nu(dz) - alpha_h(nu))``.

Four penalty families are supported:

``ot``                optimal transport from ``mu_h`` with cost ``h phi((z - y) / h)``
``wasserstein``       ``h phi(W_p(mu_h, nu) / h)``
``mart_wasserstein``  ``h phi(W_p^mart(mu_h, nu)^2 / (2h))`` over martingale couplings
``mart_ot``           martingale transport with cost ``h phi((z - y) / sqrt(2h))``

``phi`` is a convex cost on ``[0, inf)`` acting on ``|u|``.  Grid functions are
read as their piecewise-linear interpolants, and every inner supremum over
displacements is taken exactly over that interpolant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from riskgen.conjugate import conjugate, golden_max, is_convex, power_conjugate, square_conjugate
from riskgen.errors import DomainError, HorizonError
from riskgen.measures import (
    linprog_simplex,
    min_cost_coupling,
    min_cost_martingale_coupling,
    quantile_transport_cost,
    wasserstein_p,
)
from riskgen.reference import discretize_mu, lattice_average, lattice_offsets, reference_values, shift_nodes

KINDS = ("ot", "wasserstein", "mart_wasserstein", "mart_ot")
FIRST_ORDER = ("ot", "wasserstein")
MARTINGALE = ("mart_wasserstein", "mart_ot")
LP_SIZE_LIMIT = 1600


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    kind: str
    phi: object
    p: float | None = None
    h0: float = math.inf

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown penalty kind {self.kind!r}")
        phi = self.phi
        if phi.at_zero != 0.0 or phi.evaluate(0.0) != 0.0:
            raise DomainError("penalty cost must vanish at zero")
        if not phi.superlinear:
            raise DomainError("penalty cost must be superlinear")
        if not is_convex(phi):
            raise DomainError("penalty cost must be convex; pass its biconjugate")
        if not self.h0 > 0:
            raise DomainError("validity horizon h0 must be positive")
        if self.kind == "wasserstein":
            if self.p is None or not self.p > 1:
                raise DomainError("wasserstein penalty needs p > 1")
            _require_convex_composite(phi, 1.0 / self.p, "v -> phi(v^(1/p))")
        elif self.kind == "mart_wasserstein":
            if self.p is None or not self.p > 2:
                raise DomainError("mart_wasserstein penalty needs p > 2")
            _require_convex_composite(phi, 2.0 / self.p, "v -> phi(v^(2/p))")
        elif self.kind == "mart_ot":
            _require_convex_composite(phi, 0.5, "v -> phi(sqrt(v))")

    @property
    def order(self):
        return "first" if self.kind in FIRST_ORDER else "second"

    def check_horizon(self, h):
        if not h > 0:
            raise DomainError(f"step h must be positive, got {h}")
        if h >= self.h0:
            raise HorizonError(f"step h={h} is not below the validity horizon h0={self.h0}")

    def rate_cost(self, v):
        """Penalty per unit time at displacement rate ``v``.

        First-order kinds: ``v = |b| / h`` for a shift by ``b``.  Martingale
        kinds: ``v = theta^2 / (2h)`` for a dilation by ``theta``.
        """
        if self.kind == "mart_ot":
            return self.phi.evaluate(np.sqrt(v))
        return self.phi.evaluate(v)

    def rate_level(self, y):
        """Smallest rate ``v`` with ``rate_cost(v) >= y``."""
        if self.kind == "mart_ot":
            return self.phi.level(y) ** 2
        return self.phi.level(y)

    def limit(self, x):
        """Analytic generator: ``g(m)`` for first-order kinds, ``G(a)`` for martingale kinds."""
        if self.kind in FIRST_ORDER:
            return conjugate(self.phi, abs(x))
        if self.kind == "mart_wasserstein":
            return conjugate(self.phi, x)
        return square_conjugate(self.phi, x)

    def band(self, h, derivative_bound):
        """Upper bound on ``I_h f - P_h f`` from a Lipschitz (or curvature) bound of ``f``."""
        return h * self.limit(abs(derivative_bound))


def _require_convex_composite(phi, e, label):
    if phi.closed_form:
        r = 2.0 if phi.kind == "quadratic" else phi.p
        if r * e < 1.0 - 1e-12:
            raise DomainError(f"{label} must be convex")
        return
    top = max(2.0 * float(phi.knots_v[-1]), 1.0) ** (1.0 / e)
    s = np.linspace(0.0, top, 4001)
    vals = phi.evaluate(s ** e)
    vals = vals[np.isfinite(vals)]
    second = vals[:-2] + vals[2:] - 2.0 * vals[1:-1]
    if np.any(second < -1e-9 * max(1.0, float(np.max(np.abs(vals))))):
        raise DomainError(f"{label} must be convex")


# penalties


def penalty_value(spec, h, mu, nu):
    """``alpha_h(nu)`` relative to the reference law ``mu`` (``inf`` when infeasible)."""
    spec.check_horizon(h)
    phi = spec.phi
    if spec.kind == "ot":
        cost = lambda y, z: h * phi.on_line((z - y) / h)
        if len(mu) * len(nu) <= 400:
            return max(min_cost_coupling(mu, nu, cost)[1], 0.0)
        return quantile_transport_cost(mu, nu, cost)
    if spec.kind == "wasserstein":
        return h * phi.evaluate(wasserstein_p(mu, nu, spec.p) / h)
    if len(mu) * len(nu) > LP_SIZE_LIMIT:
        raise DomainError(f"martingale LP limited to {LP_SIZE_LIMIT} variables")
    if spec.kind == "mart_wasserstein":
        found = min_cost_martingale_coupling(mu, nu, lambda y, z: np.abs(z - y) ** spec.p)
        if found is None:
            return math.inf
        w2 = max(found[1], 0.0) ** (2.0 / spec.p)
        return h * phi.evaluate(w2 / (2.0 * h))
    scale = math.sqrt(2.0 * h)
    found = min_cost_martingale_coupling(mu, nu, lambda y, z: h * phi.on_line((z - y) / scale))
    return math.inf if found is None else max(found[1], 0.0)


def shift_penalty(spec, h, b):
    """``alpha_h`` of ``mu_h`` translated by ``b`` (first-order kinds)."""
    return h * spec.phi.evaluate(np.abs(b) / h)


def dilation_penalty(spec, h, theta):
    """``alpha_h`` of ``mu_h`` dilated by ``theta`` (martingale kinds).

    Every martingale coupling of ``mu`` and its dilation moves mass with
    ``E (z - y)^2 = theta^2``, so Jensen's inequality makes the dilation
    coupling optimal whenever the rate cost is convex.
    """
    return h * spec.rate_cost(theta * theta / (2.0 * h))


# exact supremal convolution over a piecewise-linear interpolant


def sup_convolution(f, w, cost, best, reach):
    """``sup_u f_lin(w + u) - cost(u)`` for each point of ``w``.

    ``cost`` is convex in ``u`` with ``cost(0) = 0``; ``best(s)`` returns the
    unconstrained maximizer of ``s u - cost(u)``.  Every linear piece of the
    interpolant within ``reach`` of ``w`` is maximized in closed form.
    """
    w = np.asarray(w, dtype=float)
    vals = f.values
    n = vals.size
    outside = max(0.0, f.xmin - float(w.min()), float(w.max()) - f.xmax)
    reach = min(float(reach), f.xmax - f.xmin + outside)
    K = int(math.ceil(reach / f.dx)) + 1
    j0 = np.floor((w - f.xmin) / f.dx).astype(int)
    out = f(w)
    for k in range(-K, K + 1):
        j = j0 + k
        a = f.xmin + j * f.dx - w
        fa = vals[np.clip(j, 0, n - 1)]
        fb = vals[np.clip(j + 1, 0, n - 1)]
        s = (fb - fa) / f.dx
        u = np.clip(best(s), a, a + f.dx)
        np.maximum(out, fa + s * (u - a) - cost(u), out=out)
    return out


def _first_order_reach(spec, h, f):
    L = f.lipschitz()
    osc = f.oscillation()
    if osc == 0.0:
        return 0.0
    phi = spec.phi
    gamma = _crossing(lambda v: phi.evaluate(v) - 1.0 - L * v)
    a = 1.0 + L * gamma
    v_max = min(phi.level(a + 1.0), phi.level(osc / h))
    return h * v_max * (1.0 + 1e-9) + f.dx


def _dilation_reach(spec, h, f):
    M = f.second_difference_bound()
    osc = f.oscillation()
    if osc == 0.0:
        return 0.0
    gamma = _crossing(lambda v: spec.rate_cost(v) - 1.0 - M * v)
    a = 1.0 + M * gamma
    v_max = min(spec.rate_level(a + 1.0), spec.rate_level(osc / h))
    return math.sqrt(2.0 * h * v_max) * (1.0 + 1e-9)


def _crossing(fn, cap=None):
    """Point past which the increasing-in-the-tail function ``fn`` stays positive.

    With ``cap`` the search stops there instead of failing when ``fn`` never
    turns positive (a cost growing exactly at the tested slope).
    """
    if fn(0.0) > 0:
        return 0.0
    hi = 1.0
    while fn(hi) <= 0:
        if cap is not None and hi >= cap:
            return cap
        hi *= 2.0
        if hi > 1e300:
            raise DomainError("cost is not superlinear enough to bound the search window")
    return brentq(fn, 0.0, hi, xtol=1e-12)


def _ot_displacement(spec, h):
    phi = spec.phi
    cost = lambda u: h * phi.on_line(u / h)
    best = lambda s: np.sign(s) * h * phi.maximizer(np.abs(s))
    return cost, best


def _power_displacement(lam, p):
    cost = lambda u: lam * np.abs(u) ** p
    best = lambda s: np.sign(s) * (np.abs(s) / (p * lam)) ** (1.0 / (p - 1.0))
    return cost, best


# the operator


def apply_I(spec, model, h, f, targets="continuous"):
    """``I_h f`` on the grid of ``f``.

    ``targets="nodes"`` restricts the ot-kind inner supremum to grid nodes,
    which is the discrete target set of the full transport LP.
    """
    spec.check_horizon(h)
    mu = discretize_mu(model, h)
    if spec.kind == "ot":
        if targets == "nodes":
            vals = _node_envelope(spec, model, h, f, mu)
        elif targets == "continuous":
            vals = _ot_envelope(spec, model, h, f, mu)
        else:
            raise DomainError(f"unknown target mode {targets!r}")
    elif spec.kind == "wasserstein":
        vals = _wasserstein_dual(spec, model, h, f, mu)
    else:
        vals = dilation_scan(spec, model, h, f, mu)[0]
    return f.with_values(vals)


def _ot_envelope(spec, model, h, f, mu):
    reach = _first_order_reach(spec, h, f)
    cost, best = _ot_displacement(spec, h)
    offsets = None if model.moves_points else lattice_offsets(mu, f.dx)
    if offsets is not None:
        envelope = sup_convolution(f, f.x, cost, best, reach)
        return lattice_average(envelope, offsets, mu.weights)
    w = model.psi(f.x, h)
    out = np.zeros(f.size)
    chunk = max(1, 2_000_000 // f.size)
    for start in range(0, len(mu), chunk):
        pts = w[:, None] + mu.points[None, start:start + chunk]
        env = sup_convolution(f, pts.ravel(), cost, best, reach).reshape(pts.shape)
        out += env @ mu.weights[start:start + chunk]
    return out


def _node_envelope(spec, model, h, f, mu):
    w = model.psi(f.x, h)
    nodes = f.x
    out = np.zeros(f.size)
    for y, m in zip(mu.points, mu.weights):
        disp = nodes[None, :] - (w[:, None] + y)
        gain = f.values[None, :] - h * spec.phi.on_line(disp / h)
        out += m * gain.max(axis=1)
    return out


def envelope_lp_value(spec, model, h, f, i):
    """The ot-kind value at node ``i`` from the full LP over couplings with nodes as targets."""
    spec.check_horizon(h)
    mu = discretize_mu(model, h)
    w = float(model.psi(f.x[i], h))
    nodes = f.x
    A, n = len(mu), f.size
    gain = f.values[None, :] - h * spec.phi.on_line((nodes[None, :] - (w + mu.points[:, None])) / h)
    rows = np.zeros((A, A * n))
    for a in range(A):
        rows[a, a * n:(a + 1) * n] = 1.0
    res = linprog_simplex(-gain.ravel(), rows, mu.weights)
    return -res.value


# wasserstein kind through its Lagrangian dual in the transport budget


def _dual_cap(spec, h):
    """Largest multiplier with finite conjugate term, or ``inf``."""
    phi, p = spec.phi, spec.p
    if math.isfinite(power_conjugate(phi, 1e12, p)):
        return math.inf
    lo, hi = 0.0, 1.0
    while math.isfinite(power_conjugate(phi, hi, p)):
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if math.isfinite(power_conjugate(phi, mid, p)):
            lo = mid
        else:
            hi = mid
    return lo / h ** (p - 1.0)


def _wasserstein_dual(spec, model, h, f, mu, grid_size=200, iters=30):
    p, phi = spec.p, spec.phi
    if f.oscillation() == 0.0:
        return reference_values(model, h, f, mu)
    pair_pts = (model.psi(f.x, h)[:, None] + mu.points[None, :]).ravel()
    offsets = None if model.moves_points else lattice_offsets(mu, f.dx)
    if offsets is not None:
        # every pair lands on the lattice, so a single multiplier needs each point once
        first = int(offsets.min())
        lattice_pts = f.xmin + f.dx * np.arange(first, f.size + int(offsets.max()))
        gather = np.arange(f.size)[:, None] + offsets[None, :] - first
    weights = mu.weights
    A = len(mu)
    osc = f.oscillation()

    def envelope(lam_pts, pts):
        cost, best = _power_displacement(lam_pts, p)
        reach = (osc / np.min(lam_pts)) ** (1.0 / p) + f.dx
        return sup_convolution(f, pts, cost, best, reach)

    def objective(lam):
        lam = np.asarray(lam, dtype=float)
        if lam.ndim == 0:
            if offsets is not None:
                env = envelope(lam, lattice_pts)[gather] @ weights
            else:
                env = envelope(lam, pair_pts).reshape(-1, A) @ weights
            return env + h * power_conjugate(phi, float(lam) * h ** (p - 1.0), p)
        env = envelope(np.repeat(lam, A), pair_pts).reshape(-1, A) @ weights
        return env + h * np.array([power_conjugate(phi, k * h ** (p - 1.0), p) for k in lam])

    cap = _dual_cap(spec, h)
    grid = np.geomspace(1e-4, 1e4, grid_size)
    if math.isfinite(cap):
        grid = np.append(grid[grid < cap], cap)
    coarse = np.array([objective(lam) for lam in grid])
    idx = np.argmin(coarse, axis=0)
    lo = np.log(grid[np.maximum(idx - 1, 0)])
    hi = np.log(grid[np.minimum(idx + 1, grid.size - 1)])
    g = (math.sqrt(5.0) - 1.0) / 2.0
    found = coarse.min(axis=0)
    for _ in range(iters):
        c, d = hi - g * (hi - lo), lo + g * (hi - lo)
        fc, fd = objective(np.exp(c)), objective(np.exp(d))
        left = fc <= fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        found = np.minimum(found, np.minimum(fc, fd))
    return found


# martingale kinds


def dilation_scan(spec, model, h, f, mu=None):
    """Supremum over dilations ``theta = k dx``; returns values and maximizing ``theta``."""
    spec.check_horizon(h)
    mu = discretize_mu(model, h) if mu is None else mu
    reach = _dilation_reach(spec, h, f)
    K = int(math.ceil(reach / f.dx))
    best = reference_values(model, h, f, mu)
    arg = np.zeros(f.size)
    for k in range(1, K + 1):
        theta = k * f.dx
        spread = 0.5 * (shift_nodes(f.values, k) + shift_nodes(f.values, -k))
        cand = reference_values(model, h, f.with_values(spread), mu) - dilation_penalty(spec, h, theta)
        better = cand > best
        best = np.where(better, cand, best)
        arg = np.where(better, theta, arg)
    return best, arg


def martingale_kernel_value(spec, model, h, f, i, budgets=41):
    """Kernel LP value at node ``i`` with grid nodes as targets (small supports only).

    ``mart_ot`` decouples into one LP per source atom.  ``mart_wasserstein``
    couples the atoms through the transport budget, which is scanned.
    """
    spec.check_horizon(h)
    mu = discretize_mu(model, h)
    if len(mu) > 40:
        raise DomainError("kernel LP cross-check is limited to supports of at most 40 points")
    w = float(model.psi(f.x[i], h)) + mu.points
    nodes, vals = f.x, f.values
    n, A = f.size, len(mu)
    if spec.kind == "mart_ot":
        total = 0.0
        scale = math.sqrt(2.0 * h)
        for wa, ma in zip(w, mu.weights):
            gain = vals - h * spec.phi.on_line((nodes - wa) / scale)
            rows = np.vstack([np.ones(n), nodes - wa])
            res = linprog_simplex(-gain, rows, np.array([1.0, 0.0]))
            if res.status != "optimal":
                raise DomainError("target nodes do not surround the source point")
            total += ma * -res.value
        return total
    if spec.kind != "mart_wasserstein":
        raise DomainError("kernel LP applies to martingale kinds")
    disp = np.abs(nodes[None, :] - w[:, None]) ** spec.p
    rows = np.zeros((2 * A + 1, A * n + 1))
    for a in range(A):
        rows[a, a * n:(a + 1) * n] = 1.0
        rows[A + a, a * n:(a + 1) * n] = nodes - w[a]
    rows[2 * A, :A * n] = disp.ravel()
    rows[2 * A, -1] = 1.0
    obj = np.concatenate([-np.tile(vals, A), [0.0]])

    def value(s):
        b = np.concatenate([mu.weights, np.zeros(A), [s]])
        res = linprog_simplex(obj, rows, b)
        return -res.value - h * spec.phi.evaluate(s ** (2.0 / spec.p) / (2.0 * h))

    s_top = float(np.max(disp @ np.ones(n)) / n)
    s_top = max(s_top, float(np.max(disp)))
    grid = np.linspace(0.0, s_top, budgets)
    scores = np.array([value(s) for s in grid])
    k = int(np.argmax(scores))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    return max(scores[k], value(golden_max(value, lo, hi, tol=1e-10)))


# finite-candidate oracle


def brute_force_I(spec, model, h, f, candidates):
    """Maximum over an explicit list of increment laws; a lower bound for ``apply_I``."""
    spec.check_horizon(h)
    if not candidates:
        raise DomainError("candidate list must be nonempty")
    mu = discretize_mu(model, h)
    w = model.psi(f.x, h)
    best = np.full(f.size, -np.inf)
    for nu in candidates:
        pen = penalty_value(spec, h, mu, nu)
        if not math.isfinite(pen):
            continue
        gain = f(w[:, None] + nu.points[None, :]) @ nu.weights - pen
        best = np.maximum(best, gain)
    return f.with_values(best)
