"""Finitely supported probability measures on the line, couplings and exact transport LPs.

Linear programs are solved by a small dense revised simplex with Bland's
anti-cycling rule.  It returns dual variables so optimality of every transport
plan is certified by a zero duality gap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr

from riskgen.errors import DomainError, InvariantViolation

MASS_TOL = 1e-12
MERGE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.size == 0 or pts.shape != w.shape:
            raise DomainError("a measure needs matching, nonempty points and weights")
        if np.any(np.diff(pts) <= 0):
            raise DomainError("support points must be strictly increasing")
        if np.any(w < 0):
            raise DomainError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise DomainError(f"weights sum to {w.sum()!r}, not 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_atoms(cls, points, weights, normalize=False, merge_tol=MERGE_TOL):
        """Sort atoms, merge points closer than ``merge_tol`` and drop zero masses."""
        pts = np.asarray(points, dtype=float).ravel()
        w = np.asarray(weights, dtype=float).ravel()
        order = np.argsort(pts, kind="stable")
        pts, w = pts[order], w[order]
        keep = w > 0
        pts, w = pts[keep], w[keep]
        if pts.size == 0:
            raise DomainError("measure has no positive mass")
        group = np.concatenate(([0], np.cumsum(np.diff(pts) > merge_tol)))
        merged_w = np.bincount(group, weights=w)
        first = np.concatenate(([True], np.diff(group) > 0))
        merged_p = pts[first]
        if normalize:
            merged_w = merged_w / merged_w.sum()
        return cls(merged_p, merged_w)

    @classmethod
    def dirac(cls, x=0.0):
        return cls(np.array([float(x)]), np.array([1.0]))

    @classmethod
    def uniform(cls, points):
        pts = np.asarray(points, dtype=float)
        return cls.from_atoms(pts, np.full(pts.size, 1.0 / pts.size))

    def __len__(self):
        return self.points.size

    def integrate(self, f):
        return float(np.dot(self.weights, f(self.points)))

    def mean(self):
        return float(np.dot(self.weights, self.points))

    def variance(self):
        m = self.mean()
        return float(np.dot(self.weights, (self.points - m) ** 2))

    def shifted(self, b):
        return DiscreteMeasure(self.points + b, self.weights)

    def scaled(self, k):
        if k == 0:
            return DiscreteMeasure.dirac(0.0)
        return DiscreteMeasure.from_atoms(self.points * k, self.weights)


@dataclass(frozen=True, eq=False)
class Coupling:
    source: DiscreteMeasure
    target: DiscreteMeasure
    matrix: np.ndarray
    potentials: tuple | None = None
    duality_gap: float | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (len(self.source), len(self.target)):
            raise DomainError("coupling matrix shape does not match the marginals")
        if np.any(m < -1e-12):
            raise InvariantViolation("coupling has negative mass")
        if np.max(np.abs(m.sum(axis=1) - self.source.weights)) > 1e-10:
            raise InvariantViolation("coupling row sums differ from the source weights")
        if np.max(np.abs(m.sum(axis=0) - self.target.weights)) > 1e-10:
            raise InvariantViolation("coupling column sums differ from the target weights")
        object.__setattr__(self, "matrix", np.maximum(m, 0.0))

    def integrate(self, cost):
        return float(np.sum(self.matrix * _cost_matrix(cost, self.source, self.target)))

    def barycenter_residuals(self):
        z, y = self.target.points, self.source.points
        return self.matrix @ z - self.source.weights * y


@dataclass(frozen=True, eq=False)
class MartingaleCoupling(Coupling):
    def __post_init__(self):
        super().__post_init__()
        res = np.abs(self.barycenter_residuals())
        if np.any(res > 1e-9 * np.maximum(self.source.weights, 1e-300) + 1e-15):
            raise InvariantViolation("martingale coupling violates the barycenter condition")


# linear programming


@dataclass(frozen=True)
class LPResult:
    status: str
    x: np.ndarray | None = None
    value: float | None = None
    duals: np.ndarray | None = None


def _simplex_phase(A, b, c, basis, tol, max_iter):
    m = A.shape[0]
    for _ in range(max_iter):
        B = A[:, basis]
        xb = np.linalg.solve(B, b)
        y = np.linalg.solve(B.T, c[basis])
        reduced = c - A.T @ y
        reduced[basis] = 0.0
        entering = np.flatnonzero(reduced < -tol)
        if entering.size == 0:
            return "optimal", basis, np.maximum(xb, 0.0), y
        j = int(entering[0])
        d = np.linalg.solve(B, A[:, j])
        rows = np.flatnonzero(d > tol)
        if rows.size == 0:
            return "unbounded", basis, xb, y
        ratios = np.maximum(xb[rows], 0.0) / d[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, best)]
        leave = min(ties, key=lambda r: basis[r])
        basis = list(basis)
        basis[leave] = j
        if len(basis) != m:
            raise InvariantViolation("simplex basis lost a column")
    raise InvariantViolation("simplex iteration limit reached")


def _independent_rows(A, tol=1e-10):
    """Indices of a maximal linearly independent set of rows (pivoted QR)."""
    if A.shape[0] == 0:
        return np.zeros(0, dtype=int)
    _, R, piv = qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(diag[0], 1e-300)))
    return np.sort(piv[:rank])


def linprog_simplex(c, A_eq, b_eq, tol=1e-11):
    """Minimize ``c x`` subject to ``A_eq x = b_eq`` and ``x >= 0``.

    Two-phase revised simplex with Bland's rule.  Redundant equality rows are
    removed up front by a rank-revealing QR; their duals are reported as zero
    and their consistency is checked on the final point.
    """
    A = np.array(A_eq, dtype=float)
    b = np.array(b_eq, dtype=float)
    c = np.array(c, dtype=float)
    m, n = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b *= sign
    keep = _independent_rows(A)
    Ak, bk = A[keep], b[keep]
    k = len(keep)
    max_iter = 200 * (k + n)
    scale = max(1.0, float(np.abs(b).sum()))

    A1 = np.hstack([Ak, np.eye(k)])
    c1 = np.concatenate([np.zeros(n), np.ones(k)])
    _, basis, xb, _ = _simplex_phase(A1, bk, c1, list(range(n, n + k)), tol, max_iter)
    if float(np.sum(xb[[i for i, j in enumerate(basis) if j >= n]])) > 1e-9 * scale:
        return LPResult("infeasible")
    for pos in range(k):
        if basis[pos] < n:
            continue
        # artificial at level zero: pivot it out on the largest available entry
        row = np.linalg.solve(A1[:, basis].T, np.eye(k)[pos])
        size = np.abs(row @ Ak)
        size[[j for j in basis if j < n]] = 0.0
        basis[pos] = int(np.argmax(size))
    status, basis, xb, y = _simplex_phase(Ak, bk, c, basis, tol, max_iter)
    if status != "optimal":
        return LPResult(status)
    x = np.zeros(n)
    x[basis] = xb
    if np.max(np.abs(A @ x - b), initial=0.0) > 1e-8 * scale:
        return LPResult("infeasible")
    duals = np.zeros(m)
    duals[keep] = y
    duals *= sign
    return LPResult("optimal", x, float(c @ x), duals)


def _cost_matrix(cost, mu, nu):
    y = mu.points[:, None]
    z = nu.points[None, :]
    out = np.asarray(cost(y, z), dtype=float)
    if out.shape != (len(mu), len(nu)):
        out = np.array([[cost(a, b) for b in nu.points] for a in mu.points], dtype=float)
    return out


def _marginal_rows(m, n):
    rows = np.zeros((m + n, m * n))
    for i in range(m):
        rows[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        rows[m + j, j::n] = 1.0
    return rows


def min_cost_coupling(mu, nu, cost):
    """Optimal coupling for ``cost(y, z)`` and its total cost, certified by LP duality."""
    C = _cost_matrix(cost, mu, nu)
    if not np.all(np.isfinite(C)):
        raise DomainError("cost must be finite on the product of the supports")
    m, n = C.shape
    A = _marginal_rows(m, n)
    b = np.concatenate([mu.weights, nu.weights])
    res = linprog_simplex(C.ravel(), A, b)
    if res.status != "optimal":
        raise InvariantViolation(f"transport LP ended with status {res.status}")
    u, v = res.duals[:m], res.duals[m:]
    gap = abs(res.value - float(u @ mu.weights + v @ nu.weights))
    coupling = Coupling(mu, nu, res.x.reshape(m, n), potentials=(u, v), duality_gap=gap)
    return coupling, res.value


def quantile_coupling(mu, nu):
    """Comonotone coupling; optimal for every cost convex in ``z - y``."""
    F = np.cumsum(mu.weights)
    G = np.cumsum(nu.weights)
    F[-1] = G[-1] = 1.0
    cuts = np.union1d(F, G)
    lo = np.concatenate(([0.0], cuts[:-1]))
    mass = cuts - lo
    keep = mass > 0
    mid = 0.5 * (lo + cuts)[keep]
    i = np.minimum(np.searchsorted(F, mid), len(mu) - 1)
    j = np.minimum(np.searchsorted(G, mid), len(nu) - 1)
    matrix = np.zeros((len(mu), len(nu)))
    np.add.at(matrix, (i, j), mass[keep])
    # absorb rounding so the marginals match exactly up to float noise
    matrix *= (mu.weights / np.maximum(matrix.sum(axis=1), 1e-300))[:, None]
    return Coupling(mu, nu, matrix)


def quantile_transport_cost(mu, nu, cost):
    """Total cost of the comonotone coupling, without building the matrix."""
    F = np.cumsum(mu.weights)
    G = np.cumsum(nu.weights)
    F[-1] = G[-1] = 1.0
    cuts = np.union1d(F, G)
    lo = np.concatenate(([0.0], cuts[:-1]))
    mass = cuts - lo
    keep = mass > 0
    mid = 0.5 * (lo + cuts)[keep]
    i = np.minimum(np.searchsorted(F, mid), len(mu) - 1)
    j = np.minimum(np.searchsorted(G, mid), len(nu) - 1)
    return float(np.dot(mass[keep], cost(mu.points[i], nu.points[j])))


def wasserstein_p(mu, nu, p, method="auto"):
    """Wasserstein p-distance; ``method`` is ``"lp"``, ``"quantile"`` or ``"auto"``."""
    if p < 1:
        raise DomainError(f"Wasserstein order must be >= 1, got {p}")
    cost = lambda y, z: np.abs(z - y) ** p
    if method == "auto":
        method = "lp" if len(mu) * len(nu) <= 400 else "quantile"
    if method == "lp":
        value = min_cost_coupling(mu, nu, cost)[1]
    elif method == "quantile":
        value = quantile_transport_cost(mu, nu, cost)
    else:
        raise DomainError(f"unknown method {method!r}")
    return max(value, 0.0) ** (1.0 / p)


def check_convex_order(mu, nu, tol=1e-9):
    """Hinge-function test of ``mu <= nu`` in convex order."""
    if abs(mu.mean() - nu.mean()) > tol:
        return False
    knots = np.union1d(mu.points, nu.points)
    call_mu = np.maximum(mu.points[None, :] - knots[:, None], 0.0) @ mu.weights
    call_nu = np.maximum(nu.points[None, :] - knots[:, None], 0.0) @ nu.weights
    return bool(np.all(call_mu <= call_nu + tol))


def min_cost_martingale_coupling(mu, nu, cost):
    """Optimal martingale coupling and its cost, or ``None`` when none exists."""
    C = _cost_matrix(cost, mu, nu)
    if not np.all(np.isfinite(C)):
        raise DomainError("cost must be finite on the product of the supports")
    m, n = C.shape
    bary = np.zeros((m, m * n))
    for i in range(m):
        bary[i, i * n:(i + 1) * n] = (nu.points - mu.points[i]) / mu.weights[i]
    A = np.vstack([_marginal_rows(m, n), bary])
    b = np.concatenate([mu.weights, nu.weights, np.zeros(m)])
    res = linprog_simplex(C.ravel(), A, b)
    if res.status == "infeasible":
        return None
    if res.status != "optimal":
        raise InvariantViolation(f"martingale LP ended with status {res.status}")
    coupling = MartingaleCoupling(mu, nu, res.x.reshape(m, n))
    return coupling, res.value


def dilation_measure(mu, theta):
    """``mu`` convolved with ``(delta_{-theta} + delta_{theta}) / 2``."""
    theta = abs(float(theta))
    pts = np.concatenate([mu.points - theta, mu.points + theta])
    w = np.concatenate([mu.weights, mu.weights]) / 2.0
    return DiscreteMeasure.from_atoms(pts, w)
