import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from riskgen.errors import DomainError
from riskgen.measures import (
    DiscreteMeasure,
    check_convex_order,
    dilation_measure,
    linprog_simplex,
    min_cost_coupling,
    min_cost_martingale_coupling,
    quantile_coupling,
    quantile_transport_cost,
    wasserstein_p,
)

dirac = DiscreteMeasure.dirac
absdiff = lambda y, z: np.abs(z - y)
square = lambda y, z: (z - y) ** 2


def two_point(a, b):
    return DiscreteMeasure.from_atoms([a, b], [0.5, 0.5])


def random_measure(rng, n, spread=3.0):
    return DiscreteMeasure.from_atoms(rng.uniform(-spread, spread, n), rng.uniform(0.05, 1.0, n),
                                      normalize=True)


def test_measure_validation():
    with pytest.raises(DomainError):
        DiscreteMeasure(np.array([0.0, 1.0]), np.array([0.7, 0.7]))
    with pytest.raises(DomainError):
        DiscreteMeasure(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    with pytest.raises(DomainError):
        DiscreteMeasure(np.array([0.0, 1.0]), np.array([1.5, -0.5]))


def test_point_masses_couple_uniquely():
    assert min_cost_coupling(dirac(0.0), dirac(2.0), absdiff)[1] == pytest.approx(2.0)


def test_two_by_two_square_cost():
    assert min_cost_coupling(two_point(0.0, 1.0), two_point(1.0, 2.0), square)[1] == pytest.approx(1.0)


def test_identity_transport_is_free():
    mu = DiscreteMeasure.from_atoms([-1.0, 0.3, 2.0], [0.2, 0.5, 0.3])
    coupling, value = min_cost_coupling(mu, mu, square)
    assert value == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(np.diag(coupling.matrix), mu.weights)


def test_wasserstein_examples():
    assert wasserstein_p(dirac(0.0), dirac(-1.7), 3.0) == pytest.approx(1.7)
    assert wasserstein_p(two_point(-1.0, 1.0), dirac(0.0), 2.0) == pytest.approx(1.0)
    mu = DiscreteMeasure.from_atoms([0.0, 1.0, 4.0], [0.2, 0.3, 0.5])
    assert wasserstein_p(mu, mu, 2.0) == pytest.approx(0.0, abs=1e-12)


def test_convex_order_examples():
    assert check_convex_order(dirac(0.0), two_point(-1.0, 1.0))
    assert not check_convex_order(two_point(-1.0, 1.0), dirac(0.0))
    assert check_convex_order(two_point(0.0, 1.0), two_point(-0.5, 1.5))


def test_martingale_coupling_of_a_dilation():
    theta = 0.7
    coupling, value = min_cost_martingale_coupling(dirac(0.0), two_point(-theta, theta), square)
    assert value == pytest.approx(theta**2)
    assert np.max(np.abs(coupling.barycenter_residuals())) <= 1e-12


def test_martingale_coupling_absent_when_not_ordered():
    assert min_cost_martingale_coupling(two_point(-1.0, 1.0), dirac(0.0), square) is None


def test_martingale_three_by_three_against_scipy():
    mu = DiscreteMeasure.uniform([-1.0, 0.0, 1.0])
    nu = DiscreteMeasure.uniform([-2.0, 0.0, 2.0])
    _, value = min_cost_martingale_coupling(mu, nu, square)
    C = (nu.points[None, :] - mu.points[:, None]) ** 2
    A, b = [], []
    for i in range(3):
        row = np.zeros((3, 3)); row[i, :] = 1; A.append(row.ravel()); b.append(mu.weights[i])
        col = np.zeros((3, 3)); col[:, i] = 1; A.append(col.ravel()); b.append(nu.weights[i])
        bary = np.zeros((3, 3)); bary[i, :] = nu.points - mu.points[i]; A.append(bary.ravel()); b.append(0.0)
    ref = linprog(C.ravel(), A_eq=np.array(A), b_eq=np.array(b), bounds=(0, None), method="highs")
    assert value == pytest.approx(ref.fun, abs=1e-10)
    assert value == pytest.approx(2.0, abs=1e-10)


def test_dilation_examples():
    d = dilation_measure(dirac(0.0), 1.0)
    assert np.allclose(d.points, [-1.0, 1.0]) and np.allclose(d.weights, [0.5, 0.5])
    mu = DiscreteMeasure.from_atoms([0.0, 1.0, 3.0], [0.2, 0.3, 0.5])
    same = dilation_measure(mu, 0.0)
    assert np.allclose(same.points, mu.points) and np.allclose(same.weights, mu.weights)
    merged = dilation_measure(two_point(0.0, 2.0), 1.0)
    assert np.allclose(merged.points, [-1.0, 1.0, 3.0])
    assert np.allclose(merged.weights, [0.25, 0.5, 0.25])


@pytest.mark.parametrize("seed", range(20))
def test_transport_matches_scipy_and_duality(seed):
    rng = np.random.default_rng(seed)
    mu = random_measure(rng, int(rng.integers(2, 21)))
    nu = random_measure(rng, int(rng.integers(2, 21)))
    cost = lambda y, z: np.abs(z - y) ** 1.5 + 0.3 * np.sin(3 * y * z)
    coupling, value = min_cost_coupling(mu, nu, cost)
    m, n = len(mu), len(nu)
    C = cost(mu.points[:, None], nu.points[None, :])
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A[m + j, j::n] = 1
    ref = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([mu.weights, nu.weights]), bounds=(0, None),
                  method="highs")
    assert value == pytest.approx(ref.fun, abs=1e-9)
    assert coupling.duality_gap <= 1e-9
    assert np.allclose(coupling.matrix.sum(axis=1), mu.weights, atol=1e-10)
    assert np.allclose(coupling.matrix.sum(axis=0), nu.weights, atol=1e-10)


def test_simplex_reports_infeasible():
    res = linprog_simplex(np.array([1.0, 1.0]), np.array([[1.0, 1.0]]), np.array([-1.0]))
    assert res.status == "infeasible"


@pytest.mark.parametrize("seed", range(5))
def test_quantile_coupling_is_optimal_for_convex_costs(seed):
    rng = np.random.default_rng(100 + seed)
    mu, nu = random_measure(rng, 7), random_measure(rng, 9)
    cost = lambda y, z: np.abs(z - y) ** 2.5
    lp = min_cost_coupling(mu, nu, cost)[1]
    assert quantile_transport_cost(mu, nu, cost) == pytest.approx(lp, abs=1e-10)
    assert quantile_coupling(mu, nu).integrate(cost) == pytest.approx(lp, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_wasserstein_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_measure(rng, int(rng.integers(1, 7))) for _ in range(3))
    for p in (1.0, 2.0):
        assert wasserstein_p(a, c, p) <= wasserstein_p(a, b, p) + wasserstein_p(b, c, p) + 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 3.0))
def test_dilation_is_above_in_convex_order(seed, theta):
    mu = random_measure(np.random.default_rng(seed), 5)
    assert check_convex_order(mu, dilation_measure(mu, theta))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 2.0))
def test_martingale_coupling_preserves_mean(seed, theta):
    rng = np.random.default_rng(seed)
    mu = random_measure(rng, 4)
    nu = dilation_measure(mu, theta)
    coupling, _ = min_cost_martingale_coupling(mu, nu, square)
    target_mean = float(coupling.matrix.sum(axis=0) @ nu.points)
    assert target_mean == pytest.approx(mu.mean(), abs=1e-8)
    assert np.all(np.abs(coupling.barycenter_residuals()) <= 1e-9 * mu.weights)
