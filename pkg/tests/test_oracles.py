import math

import numpy as np
import pytest

from riskgen.conjugate import CostFunction
from riskgen.errors import ConfigError, DomainError, StabilityError
from riskgen.measures import DiscreteMeasure
from riskgen.onestep import PenaltySpec
from riskgen.oracles import (
    HjbProblem,
    cfl_number,
    entropic_oracle,
    heat_value,
    hjb_composition_gap,
    hjb_solve,
    mc_drift_lower_bound,
    oracle_gate,
    variance_scan_oracle,
)
from riskgen.reference import Drift, GridFunction, ReferenceModel, apply_P

gauss = ReferenceModel.gaussian(1.0)
quadratic = CostFunction.quadratic(1.0)
ot = PenaltySpec("ot", quadratic)
mart = PenaltySpec("mart_wasserstein", CostFunction.power(2.0), p=4.0)


def sine(dx=0.02, half=8.0):
    return GridFunction.sample(np.sin, -half, half, dx)


def flat(value=1.5, dx=0.05):
    return GridFunction.sample(lambda x: np.full_like(x, value), -4.0, 4.0, dx)


def zero_hamiltonian(order, terminal, t, model=gauss):
    return HjbProblem(order, [-1.0, 1.0], [0.0, 0.0], model, terminal, t)


def test_heat_equation_closed_form():
    f = sine()
    u = hjb_solve(zero_hamiltonian("first", f, 0.5))
    inner = f.window(2.0)
    assert np.max(np.abs(u.values - math.exp(-0.25) * np.sin(f.x))[inner]) <= 5e-3
    assert np.max(np.abs(heat_value(1.0, 0.5, f).values - math.exp(-0.25) * np.sin(f.x))[inner]) <= 1e-4


@pytest.mark.parametrize("spec", [ot, mart], ids=["first", "second"])
def test_constants_are_stationary(spec):
    f = flat()
    u = hjb_solve(HjbProblem.from_penalty(spec, gauss, f, 0.3, span=3.0))
    assert np.allclose(u.values, 1.5, rtol=0, atol=1e-12)


def test_closed_form_oracles_keep_constants():
    f = flat()
    assert np.allclose(entropic_oracle(1.0, 2.0, 0.5, f).values, 1.5, rtol=0, atol=1e-12)
    assert np.allclose(variance_scan_oracle(1.0, CostFunction.power(2.0), 0.5, f).values, 1.5,
                       rtol=0, atol=1e-12)


def test_entropic_matches_first_order_hjb():
    f = sine()
    u = hjb_solve(HjbProblem.from_penalty(ot, gauss, f, 0.5))
    oracle = entropic_oracle(gauss, 1.0, 0.5, f)
    assert np.max(np.abs(u.values - oracle.values)[f.window(2.0)]) <= 1e-2


def test_gate_scenarios_pass():
    assert all(g.passed for g in oracle_gate())


def test_small_tilt_approaches_heat():
    f = sine()
    oracle = entropic_oracle(1.0, 1e-3, 0.5, f)
    inner = f.window(2.0)
    assert np.max(np.abs(oracle.values - math.exp(-0.25) * np.sin(f.x))[inner]) <= 2e-3


def test_entropic_against_sampled_log_exponential():
    f = sine()
    z = np.random.default_rng(5).standard_normal(1_000_000)
    samples = np.exp(np.sin(math.sqrt(0.5) * z))
    mean, se = samples.mean(), samples.std(ddof=1) / math.sqrt(z.size)
    value = entropic_oracle(1.0, 1.0, 0.5, f)(0.0)
    # delta method for the log
    assert abs(value - math.log(mean)) <= 3 * se / mean


def test_entropic_sandwich():
    f = sine()
    oracle = entropic_oracle(1.0, 1.0, 0.5, f).values
    assert np.all(oracle >= heat_value(1.0, 0.5, f).values - 1e-12)
    assert np.all(oracle <= f.values.max() + 1e-12)


def test_entropic_rejects_drift():
    with pytest.raises(DomainError):
        entropic_oracle(ReferenceModel.gaussian(1.0, drift=Drift.linear(1.0)), 1.0, 0.5, sine())
    with pytest.raises(DomainError):
        entropic_oracle(ReferenceModel.compound_poisson(1.0, DiscreteMeasure.dirac(1.0)), 1.0, 0.5, sine())


def test_variance_scan_without_extra_variance_is_heat():
    f = GridFunction.sample(np.abs, -6.0, 6.0, 0.02)
    locked = CostFunction.piecewise_linear([(0.0, 0.0)], tail="infinite")
    scan = variance_scan_oracle(1.0, locked, 0.25, f)
    assert np.allclose(scan.values, heat_value(1.0, 0.25, f).values, rtol=0, atol=1e-4)


def test_variance_scan_rejects_nonconvex_terminal():
    with pytest.raises(DomainError):
        variance_scan_oracle(1.0, CostFunction.power(2.0), 0.25, sine())


def test_variance_scan_grows_with_horizon():
    f = GridFunction.sample(np.abs, -8.0, 8.0, 0.02)
    phi = CostFunction.power(2.0)
    inner = f.window(2.0)
    values = [variance_scan_oracle(1.0, phi, t, f).values[inner] for t in (0.05, 0.1, 0.2)]
    assert np.all(values[1] >= values[0] - 1e-9) and np.all(values[2] >= values[1] - 1e-9)


def test_variance_scan_reports_maximizer():
    f = GridFunction.sample(np.abs, -8.0, 8.0, 0.02)
    scan, arg = variance_scan_oracle(1.0, CostFunction.power(2.0), 0.25, f, return_argmax=True)
    centre = int(np.argmin(np.abs(f.x)))
    assert arg[centre] > 0 and scan.values[centre] > heat_value(1.0, 0.25, f).values[centre]


def test_cfl_violation_is_rejected():
    f = sine(dx=0.02)
    problem = zero_hamiltonian("first", f, 0.5)
    assert cfl_number(problem, 1e-4) <= 0.9
    with pytest.raises(StabilityError):
        hjb_solve(HjbProblem("first", [-1.0, 1.0], [0.0, 0.0], gauss, f, 0.5, dt=0.01))


def test_hamiltonian_shape_is_checked():
    f = sine()
    with pytest.raises(DomainError):
        HjbProblem("first", [-1.0, 0.0, 1.0], [0.0, 1.0, 0.0], gauss, f, 0.5)
    with pytest.raises(DomainError):
        HjbProblem("second", [-1.0, 0.0, 1.0], [1.0, 0.0, 1.0], gauss, f, 0.5)


def test_hjb_monotone_in_terminal():
    f = sine()
    g = f.with_values(np.maximum(f.values, 0.3))
    u = hjb_solve(HjbProblem.from_penalty(ot, gauss, f, 0.3, span=3.0))
    v = hjb_solve(HjbProblem.from_penalty(ot, gauss, g, 0.3, span=3.0))
    assert np.all(v.values >= u.values - 1e-12)


def test_hjb_dominates_reference():
    f = sine()
    u = hjb_solve(HjbProblem.from_penalty(ot, gauss, f, 0.5))
    inner = f.window(2.0)
    assert np.all(u.values[inner] >= heat_value(1.0, 0.5, f).values[inner] - 5e-3)


def test_hjb_composition():
    problem = HjbProblem.from_penalty(ot, gauss, sine(), 0.5)
    gap, err = hjb_composition_gap(problem, 2.0)
    assert gap <= 2.0 * err


def test_hjb_with_jumps_and_drift_keeps_order():
    model = ReferenceModel.compound_poisson(1.0, DiscreteMeasure.from_atoms([-0.5, 0.5], [0.5, 0.5]),
                                            drift=Drift.linear(-0.5))
    f = sine(dx=0.05)
    u = hjb_solve(HjbProblem.from_penalty(ot, model, f, 0.3, span=3.0))
    assert np.max(u.values) <= np.max(f.values) + 0.3 * 0.5 + 1e-9
    assert np.all(np.isfinite(u.values))


def test_monte_carlo_needs_seed_and_paths():
    f = sine()
    with pytest.raises(ConfigError):
        mc_drift_lower_bound(gauss, quadratic, 0.5, f, [0.0], 10_000, None)
    with pytest.raises(DomainError):
        mc_drift_lower_bound(gauss, quadratic, 0.5, f, [0.0], 1_000, 1)
    with pytest.raises(DomainError):
        mc_drift_lower_bound(gauss, quadratic, 0.5, f, [0.0], 10_000, 1, steps=10)


def test_monte_carlo_zero_control_matches_reference():
    f = sine()
    xs = np.array([-1.0, 0.0, 1.3])
    mc = mc_drift_lower_bound(gauss, quadratic, 0.5, f, [0.0], 20_000, 3, x_points=xs)
    P = f
    for _ in range(10):
        P = apply_P(gauss.with_step(f.dx), 0.05, P)
    assert np.all(np.abs(mc.values - P(xs)) <= 3 * mc.stderr)


def test_monte_carlo_on_constants_has_no_variance():
    mc = mc_drift_lower_bound(gauss, quadratic, 0.5, flat(), [0.0, 1.0], 10_000, 9,
                              x_points=np.array([0.0]))
    assert mc.values[0] == pytest.approx(1.5) and mc.stderr[0] == 0.0


def test_monte_carlo_is_deterministic():
    xs = np.array([0.0, 0.5])
    a = mc_drift_lower_bound(gauss, quadratic, 0.5, sine(), [0.0, 0.5], 10_000, 17, x_points=xs)
    b = mc_drift_lower_bound(gauss, quadratic, 0.5, sine(), [0.0, 0.5], 10_000, 17, x_points=xs)
    assert np.array_equal(a.values, b.values)


def test_monte_carlo_sandwich():
    f = sine()
    xs = np.array([-1.0, 0.0, 1.5])
    controls = [0.0, 0.5, -0.5, lambda x: np.cos(x)]
    mc = mc_drift_lower_bound(gauss, quadratic, 0.5, f, controls, 20_000, 2024, x_points=xs)
    oracle = entropic_oracle(1.0, 1.0, 0.5, f)(xs)
    zero = mc.control_values[0]
    assert np.all(mc.values <= oracle + 3 * mc.stderr)
    assert np.all(mc.values >= zero)


def test_compound_poisson_zero_control_matches_reference():
    model = ReferenceModel.compound_poisson(2.0, DiscreteMeasure.from_atoms([-0.5, 0.5], [0.5, 0.5]))
    f = sine()
    xs = np.array([0.0, 0.7])
    mc = mc_drift_lower_bound(model, quadratic, 0.5, f, [0.0], 20_000, 4, x_points=xs)
    P = f
    for _ in range(10):
        P = apply_P(model, 0.05, P)
    assert np.all(np.abs(mc.values - P(xs)) <= 3 * mc.stderr)
