"""The thirteen acceptance checks, shared by ``riskgen suite`` and the test suite.

Each check returns a ``CheckResult`` with a verdict and the numbers behind it.
Tolerances and scenarios are fixed here; nothing is relaxed on failure.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from riskgen.chernoff import composition_gap, convergence_study
from riskgen.conjugate import CostFunction, biconjugate, conjugate
from riskgen.genlab import (
    compute_G_h,
    compute_g_h,
    generator_residual_first,
    generator_residual_second,
)
from riskgen.measures import DiscreteMeasure, check_convex_order, min_cost_martingale_coupling
from riskgen.onestep import PenaltySpec, apply_I, envelope_lp_value
from riskgen.oracles import (
    HjbProblem,
    entropic_oracle,
    hjb_composition_gap,
    hjb_solve,
    mc_drift_lower_bound,
    oracle_gate,
    variance_scan_oracle,
)
from riskgen.reference import GridFunction, ReferenceModel, apply_P


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.name} ({self.seconds:.1f} s)"


def shipped_costs():
    step = 0.001
    v = np.arange(0.0, 10.0 + step / 2, step)
    stair = np.where(v < 1.0, 0.0, np.where(v < 2.0, 1.0, v * v))
    return {
        "quadratic": CostFunction.quadratic(1.0),
        "quadratic_gamma_0.5": CostFunction.quadratic(0.5),
        "square": CostFunction.power(2.0, 1.0),
        "quartic": CostFunction.power(4.0, 1.0),
        "power_1.5": CostFunction.power(1.5, 2.0),
        "tabulated_square": CostFunction.tabulated(step, v * v),
        "tabulated_stair": CostFunction.tabulated(step, stair),
        "knots_with_square_tail": CostFunction.piecewise_linear(
            [(0.0, 0.0), (1.0, 0.0), (2.0, 3.0)], tail=CostFunction.power(2.0, 1.0)),
    }


def bump(x):
    return np.exp(-np.asarray(x, dtype=float) ** 2)


# 1


def check_conjugates(tol=1e-9):
    vs = np.round(np.arange(0.0, 10.0 + 1e-9, 0.1), 12)
    ws = vs
    detail = {}
    ok = True
    for name, c in shipped_costs().items():
        cv = c.evaluate(vs)
        cw = conjugate(c, ws)
        young = float(np.min(cv[:, None] + cw[None, :] - vs[:, None] * ws[None, :]))
        monotone = float(np.min(np.diff(cw)))
        convex = float(np.min(cw[2:] - 2.0 * cw[1:-1] + cw[:-2]))
        cc = biconjugate(c).evaluate(vs)
        lower = float(np.min(cc - c.evaluate(0.0)))
        upper = float(np.max(cc - cv))
        passed = young >= -tol and monotone >= -tol and convex >= -tol and lower >= -tol and upper <= tol
        detail[name] = {"fenchel_young_min": young, "conjugate_step_min": monotone,
                        "second_difference_min": convex, "sandwich_low": lower,
                        "sandwich_high": upper, "passed": passed}
        ok &= passed
    closed = float(np.max(np.abs(conjugate(CostFunction.quadratic(1.0), ws) - ws * ws / 2.0)))
    detail["quadratic_closed_form_error"] = closed
    return ok and closed <= 1e-8, detail


# 2-4


GENERATOR_HS = (0.1, 0.05, 0.025, 0.0125)
SLOPES = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)


def _first_order_identity(spec, analytic, tol=1e-6):
    model = ReferenceModel.gaussian(1.0)
    err = max(abs(compute_g_h(spec, model, h, m) / h - analytic(m)) for h in GENERATOR_HS for m in SLOPES)
    return err <= tol, {"max_abs_error": err}


def check_ot_generator():
    return _first_order_identity(PenaltySpec("ot", CostFunction.quadratic(1.0)), lambda m: m * m / 2.0)


def check_wasserstein_generator():
    spec = PenaltySpec("wasserstein", CostFunction.power(2.0, 1.0), p=2.0)
    return _first_order_identity(spec, lambda m: m * m / 4.0)


def check_second_order_generators(tol=1e-6):
    model = ReferenceModel.gaussian(1.0)
    specs = {
        "mart_wasserstein": PenaltySpec("mart_wasserstein", CostFunction.power(2.0, 1.0), p=4.0),
        "mart_ot": PenaltySpec("mart_ot", CostFunction.power(4.0, 1.0)),
    }
    detail, ok = {}, True
    for name, spec in specs.items():
        err, nonpos = 0.0, 0.0
        for h in (0.1, 0.05, 0.025):
            for a in (-1.0, 0.0, 0.5, 1.0, 2.0):
                value = compute_G_h(spec, model, h, a)
                err = max(err, abs(value / h - spec.limit(a)))
                if a <= 0:
                    nonpos = max(nonpos, abs(value))
        detail[name] = {"max_abs_error": err, "max_abs_nonpositive": nonpos}
        ok &= err <= tol and nonpos == 0.0
    return ok, detail


# 5-6


RESIDUAL_DX = 0.002


def _decay(residuals, factor=0.2, slack=0.1):
    positive = all(r > 0 for r in residuals)
    steady = all(b <= (1.0 + slack) * a for a, b in zip(residuals, residuals[1:]))
    return positive and steady and residuals[-1] <= factor * residuals[0]


def _residuals(second):
    model = ReferenceModel.gaussian(1.0, step=RESIDUAL_DX)
    f = GridFunction.sample(bump, -6.0, 6.0, RESIDUAL_DX)
    x = f.x
    if second:
        spec = PenaltySpec("mart_wasserstein", CostFunction.power(2.0, 1.0), p=4.0)
        d2 = (4.0 * x * x - 2.0) * bump(x)
        run = lambda h: generator_residual_second(spec, model, h, f, d2, 2.0)
    else:
        spec = PenaltySpec("ot", CostFunction.quadratic(1.0))
        d1 = -2.0 * x * bump(x)
        run = lambda h: generator_residual_first(spec, model, h, f, d1, 2.0)
    hs = [0.1 * 2.0 ** -k for k in range(6)]
    res = [run(h) for h in hs]
    return _decay(res), {"h": hs, "residual": res, "ratio": res[-1] / res[0]}


def check_first_order_residuals():
    return _residuals(second=False)


def check_second_order_residuals():
    return _residuals(second=True)


# 7


STRUCTURAL_SPECS = {
    "ot": lambda: PenaltySpec("ot", CostFunction.quadratic(1.0)),
    "wasserstein": lambda: PenaltySpec("wasserstein", CostFunction.power(2.0, 1.0), p=2.0),
    "mart_wasserstein": lambda: PenaltySpec("mart_wasserstein", CostFunction.power(2.0, 1.0), p=4.0),
    "mart_ot": lambda: PenaltySpec("mart_ot", CostFunction.power(4.0, 1.0)),
}


def random_lipschitz(rng, xmin=-3.0, xmax=3.0, dx=0.05, terms=3):
    amp = rng.uniform(-0.6, 0.6, terms)
    freq = rng.uniform(0.5, 2.0, terms)
    phase = rng.uniform(0.0, 2.0 * math.pi, terms)
    fn = lambda x: np.sum(amp[:, None] * np.sin(freq[:, None] * x[None, :] + phase[:, None]), axis=0)
    return GridFunction.sample(fn, xmin, xmax, dx)


def structural_report(spec, model, h, f, g, lam=0.3, cash=2.0):
    """Worst violations of the one-step structure for ``f`` and ``g >= f``."""
    If, Ig = apply_I(spec, model, h, f).values, apply_I(spec, model, h, g).values
    mix = apply_I(spec, model, h, f.with_values(lam * f.values + (1 - lam) * g.values)).values
    shifted = apply_I(spec, model, h, f.with_values(f.values + cash)).values
    Pf = apply_P(model, h, f).values
    bound = f.lipschitz() if spec.order == "first" else f.second_difference_bound()
    return {
        "monotone": float(np.max(If - Ig)),
        "convex": float(np.max(mix - (lam * If + (1 - lam) * Ig))),
        "cash": float(np.max(np.abs(shifted - If - cash))),
        "above_reference": float(np.max(Pf - If)),
        "band": float(np.max(If - Pf - spec.band(h, bound))),
    }


def check_structure(seed=20240607, tol=1e-6):
    rng = np.random.default_rng(seed)
    model = ReferenceModel.gaussian(1.0, step=0.05)
    h = 0.05
    detail, ok = {}, True
    for name, make in STRUCTURAL_SPECS.items():
        spec = make()
        worst = {}
        for _ in range(3):
            f = random_lipschitz(rng)
            lift = random_lipschitz(rng)
            g = f.with_values(f.values + np.abs(lift.values))
            curvature = np.max(np.abs(np.diff(f.values, 2))) / f.dx ** 2
            grid_tol = tol + 0.125 * f.dx ** 2 * curvature
            for key, val in structural_report(spec, model, h, f, g).items():
                worst[key] = max(worst.get(key, -math.inf), val - grid_tol)
        detail[name] = worst
        ok &= all(v <= 0.0 for v in worst.values())
    return ok, detail


# 8


def check_envelope_lp(instances=20, seed=7, tol=1e-8):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        dx = 0.1
        n = int(rng.integers(8, 21))
        f = GridFunction(-0.5 * (n - 1) * dx, dx, rng.uniform(-1.0, 1.0, n))
        atoms = int(rng.integers(2, 21))
        base = DiscreteMeasure.from_atoms(rng.uniform(-2.0, 2.0, atoms), rng.uniform(0.1, 1.0, atoms),
                                          normalize=True)
        model = ReferenceModel.scaled_fixed(base)
        gamma = float(rng.uniform(0.3, 3.0))
        spec = PenaltySpec("ot", CostFunction.quadratic(gamma))
        h = float(rng.uniform(0.05, 0.5))
        env = apply_I(spec, model, h, f, targets="nodes").values
        for i in range(n):
            worst = max(worst, abs(env[i] - envelope_lp_value(spec, model, h, f, i)))
    return worst <= tol, {"max_abs_gap": worst, "instances": instances}


# 9


def strassen_corpus(size=200, seed=11):
    """Equal-mean pairs with at most five atoms; half built to be in convex order."""
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < size:
        m = int(rng.integers(1, 6))
        mu = DiscreteMeasure.from_atoms(rng.integers(-4, 5, m).astype(float),
                                        rng.integers(1, 5, m).astype(float), normalize=True)
        if len(pairs) % 2 == 0:
            # spread one atom of mu over two points around it
            k = int(rng.integers(len(mu)))
            y = mu.points[k]
            a, b = float(rng.integers(1, 4)), float(rng.integers(1, 4))
            pts = np.concatenate([np.delete(mu.points, k), [y - a, y + b]])
            wts = np.concatenate([np.delete(mu.weights, k), mu.weights[k] * np.array([b, a]) / (a + b)])
            nu = DiscreteMeasure.from_atoms(pts, wts)
        else:
            n = int(rng.integers(1, 6))
            nu = DiscreteMeasure.from_atoms(rng.integers(-4, 5, n).astype(float),
                                            rng.integers(1, 5, n).astype(float), normalize=True)
            nu = nu.shifted(mu.mean() - nu.mean())
        if len(mu) * len(nu) <= 25:
            pairs.append((mu, nu))
    return pairs


def check_strassen(size=200):
    zero = lambda y, z: np.zeros(np.broadcast(y, z).shape)
    mismatches, ordered = 0, 0
    for mu, nu in strassen_corpus(size):
        lp = min_cost_martingale_coupling(mu, nu, zero) is not None
        hinge = check_convex_order(mu, nu)
        ordered += hinge
        mismatches += lp != hinge
    return mismatches == 0, {"pairs": size, "in_convex_order": ordered, "mismatches": mismatches}


# 10-13


NS = (2, 4, 8, 16, 32, 64)


def first_order_chernoff_setup():
    spec = PenaltySpec("ot", CostFunction.quadratic(1.0))
    model = ReferenceModel.gaussian(1.0)
    f = GridFunction.sample(np.sin, -12.0, 12.0, 0.01)
    return spec, model, f


def second_order_chernoff_setup():
    phi = CostFunction.power(2.0, 1.0)
    spec = PenaltySpec("mart_wasserstein", phi, p=4.0)
    model = ReferenceModel.gaussian(1.0)
    f = GridFunction.sample(np.abs, -8.0, 8.0, 0.01)
    return spec, model, f


def _chernoff_verdict(table, factor):
    ok = table.monotone and table.errors[-1] <= table.errors[0] / factor
    return ok, {"n": list(table.ns), "error": list(table.errors), "trust_radius": table.trust_radius,
                "radius": table.radius, "monotone": table.monotone}


def check_first_order_chernoff():
    spec, model, f = first_order_chernoff_setup()
    oracle = entropic_oracle(1.0, 1.0, 0.5, f)
    return _chernoff_verdict(convergence_study(spec, model, 0.5, NS, f, oracle, 2.0), 4.0)


def check_second_order_chernoff():
    spec, model, f = second_order_chernoff_setup()
    oracle = variance_scan_oracle(1.0, spec.phi, 0.25, f)
    return _chernoff_verdict(convergence_study(spec, model, 0.25, NS, f, oracle, 2.0), 3.0)


MC_X = (-1.0, 0.0, 0.5, 1.5)
MC_CONTROLS = (0.0, 0.5, -0.5, 1.0, -1.0)


def check_oracle_gate(paths=100_000, seed=2024):
    detail, ok = {}, True
    for g in oracle_gate():
        detail[g.name] = {"sup_error": g.error, "tolerance": g.tolerance}
        ok &= g.passed
    spec, model, f = second_order_chernoff_setup()
    scan = variance_scan_oracle(1.0, spec.phi, 0.25, f)
    fd = hjb_solve(HjbProblem.from_penalty(spec, model, f, 0.25))
    scan_err = float(np.max(np.abs(scan.values - fd.values)[f.window(2.0)]))
    detail["variance scan vs second-order HJB"] = {"sup_error": scan_err, "tolerance": 2e-2}
    ok &= scan_err <= 2e-2
    g = GridFunction.sample(np.sin, -8.0, 8.0, 0.01)
    mc = mc_drift_lower_bound(model, CostFunction.quadratic(1.0), 0.5, g, MC_CONTROLS, paths, seed,
                              x_points=np.array(MC_X))
    oracle = entropic_oracle(1.0, 1.0, 0.5, g)(np.array(MC_X))
    slack = float(np.max(mc.values - oracle - 3.0 * mc.stderr))
    detail["monte carlo vs entropic"] = {"values": mc.values.tolist(), "stderr": mc.stderr.tolist(),
                                         "oracle": oracle.tolist(), "max_excess": slack}
    ok &= slack <= 0.0
    return ok, detail


def check_semigroup():
    detail, ok = {}, True
    spec, model, f = first_order_chernoff_setup()
    coarse = GridFunction.sample(np.sin, -8.0, 8.0, 0.02)
    gap, err = hjb_composition_gap(HjbProblem.from_penalty(spec, model, coarse, 0.5), 2.0)
    detail["hjb first order"] = {"gap": gap, "scheme_error": err}
    ok &= gap <= 2.0 * err
    gap, err = composition_gap(spec, model, 0.5, 16, f, 2.0)
    detail["chernoff first order"] = {"gap": gap, "scheme_error": err}
    ok &= gap <= 2.0 * err
    spec2, model2, f2 = second_order_chernoff_setup()
    gap, err = composition_gap(spec2, model2, 0.25, 16, f2, 2.0)
    detail["chernoff second order"] = {"gap": gap, "scheme_error": err}
    ok &= gap <= 2.0 * err
    return ok, detail


CRITERIA = {
    1: ("conjugate suite", check_conjugates),
    2: ("first-order generator identity (ot)", check_ot_generator),
    3: ("first-order generator identity (wasserstein)", check_wasserstein_generator),
    4: ("second-order generator identities", check_second_order_generators),
    5: ("first-order residual decay", check_first_order_residuals),
    6: ("second-order residual decay", check_second_order_residuals),
    7: ("one-step structure", check_structure),
    8: ("envelope against transport LP", check_envelope_lp),
    9: ("convex order against martingale LP", check_strassen),
    10: ("first-order Chernoff convergence", check_first_order_chernoff),
    11: ("second-order Chernoff convergence", check_second_order_chernoff),
    12: ("oracle cross-validation", check_oracle_gate),
    13: ("semigroup composition", check_semigroup),
}


def run_check(number):
    name, fn = CRITERIA[number]
    start = time.perf_counter()
    passed, detail = fn()
    return CheckResult(number, name, bool(passed), detail, time.perf_counter() - start)


def run_suite(numbers=None):
    return [run_check(k) for k in (numbers or sorted(CRITERIA))]
