import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskgen.conjugate import (
    CostFunction,
    biconjugate,
    conjugate,
    golden_max,
    is_convex,
    power_conjugate,
    square_conjugate,
)
from riskgen.errors import DomainError


def brute_conjugate(c, w, v_max=60.0, n=600_001):
    v = np.linspace(0.0, v_max, n)
    return float(np.max(w * v - c.evaluate(v)))


def test_quadratic_conjugate_closed_form():
    assert conjugate(CostFunction.quadratic(1.0), 3.0) == pytest.approx(4.5, abs=1e-12)


def test_conjugate_on_negative_axis_is_minus_c0():
    assert conjugate(CostFunction.quadratic(1.0), -2.0) == 0.0


def test_tabulated_square_conjugate():
    step = 0.001
    v = np.arange(0.0, 10.0 + step / 2, step)
    c = CostFunction.tabulated(step, v * v)
    assert conjugate(c, 2.0) == pytest.approx(1.0, abs=1e-5)


def test_quadratic_is_its_own_biconjugate():
    c = CostFunction.quadratic(1.0)
    v = np.linspace(0.0, 10.0, 1001)
    assert np.max(np.abs(biconjugate(c).evaluate(v) - c.evaluate(v))) == 0.0


def test_stair_biconjugate_is_a_convex_minorant():
    step = 0.001
    v = np.arange(0.0, 10.0 + step / 2, step)
    stair = np.where(v < 1.0, 0.0, np.where(v < 2.0, 1.0, v * v))
    c = CostFunction.tabulated(step, stair)
    cc = biconjugate(c)
    assert np.all(cc.evaluate(v) <= c.evaluate(v) + 1e-12)
    assert is_convex(cc)
    # double brute-force conjugation on the tabulation grid
    w = np.linspace(0.0, 25.0, 2501)
    cstar = np.max(w[:, None] * v[None, :] - stair[None, :], axis=1)
    probe = np.array([0.5, 1.5, 2.5, 4.0])
    brute = np.max(probe[:, None] * w[None, :] - cstar[None, :], axis=1)
    assert cc.evaluate(probe) == pytest.approx(brute, abs=2e-2)


def test_knot_biconjugate_keeps_the_flat_start():
    c = CostFunction.piecewise_linear([(0.0, 0.0), (1.0, 0.0), (2.0, 3.0)], tail=CostFunction.power(2.0))
    assert biconjugate(c).evaluate(1.0) == pytest.approx(0.0, abs=1e-12)


def test_non_superlinear_cost_is_rejected():
    c = CostFunction.piecewise_linear([(0.0, 0.0), (1.0, 1.0)], tail="linear")
    with pytest.raises(DomainError):
        conjugate(c, 5.0)


def test_infinite_tail_caps_the_domain():
    c = CostFunction.piecewise_linear([(0.0, 0.0), (1.0, 0.5)], tail="infinite")
    assert c.evaluate(2.0) == math.inf
    # sup over v in [0, 1] of 3 v - v/2
    assert conjugate(c, 3.0) == pytest.approx(2.5)


def test_square_conjugate_of_quartic():
    # sup_x (2 x^2 - x^4) = 1
    assert square_conjugate(CostFunction.power(4.0), 2.0) == pytest.approx(1.0, abs=1e-9)


def test_power_conjugate_matches_brute_force():
    c = CostFunction.power(3.0, 0.5)
    v = np.linspace(0.0, 20.0, 200_001)
    for a in (0.3, 1.0, 2.5):
        brute = np.max(a * v**2 - c.evaluate(v))
        assert power_conjugate(c, a, 2.0) == pytest.approx(brute, abs=1e-6)


def test_golden_max_finds_interior_maximum():
    x = golden_max(lambda s: -(s - 0.3) ** 2, -1.0, 2.0, tol=1e-12)
    assert x == pytest.approx(0.3, abs=1e-8)


@pytest.mark.parametrize("c", [
    CostFunction.quadratic(0.7),
    CostFunction.power(1.5, 2.0),
    CostFunction.power(4.0, 0.3),
    CostFunction.piecewise_linear([(0.0, 0.0), (0.5, 0.1), (1.0, 0.7), (3.0, 2.0)]),
])
def test_conjugate_matches_brute_force(c):
    for w in (0.0, 0.4, 1.3, 3.7, 7.0):
        assert conjugate(c, w) == pytest.approx(brute_conjugate(c, w), abs=1e-6)


costs = st.one_of(
    st.builds(CostFunction.quadratic, st.floats(0.1, 5.0)),
    st.builds(CostFunction.power, st.floats(1.2, 5.0), st.floats(0.1, 3.0)),
)
grid_points = st.floats(0.0, 10.0)


@settings(max_examples=60, deadline=None)
@given(costs, grid_points, grid_points)
def test_fenchel_young(c, v, w):
    assert c.evaluate(v) + conjugate(c, w) >= v * w - 1e-9


@settings(max_examples=60, deadline=None)
@given(costs, grid_points, grid_points)
def test_conjugate_monotone(c, w1, w2):
    lo, hi = sorted((w1, w2))
    assert conjugate(c, lo) <= conjugate(c, hi) + 1e-12


@settings(max_examples=60, deadline=None)
@given(costs, grid_points, grid_points)
def test_conjugate_midpoint_convex(c, w1, w2):
    mid = conjugate(c, 0.5 * (w1 + w2))
    assert mid <= 0.5 * (conjugate(c, w1) + conjugate(c, w2)) + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.1, 5.0), grid_points)
def test_order_reversal(g1, g2, w):
    # gamma small means a steeper cost v^2 / (2 gamma)
    steep, flat = CostFunction.quadratic(min(g1, g2)), CostFunction.quadratic(max(g1, g2))
    assert conjugate(steep, w) <= conjugate(flat, w) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 3.0), min_size=2, max_size=6), st.floats(0.0, 10.0))
def test_biconjugate_sandwich(increments, v):
    values = np.concatenate([[0.0], np.cumsum(increments)])
    knots = [(float(i), float(c)) for i, c in enumerate(values)]
    c = CostFunction.piecewise_linear(knots)
    cc = biconjugate(c)
    assert c.evaluate(0.0) - 1e-9 <= cc.evaluate(v) <= c.evaluate(v) + 1e-9
