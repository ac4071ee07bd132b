"""Command line runner: ``riskgen <subcommand> --config <path> [--out-dir <path>] [--seed <int>]``.

Every run writes one CSV table and one JSON summary.  Exit codes: 0 when
every verdict holds, 2 when the configuration is invalid, 3 when a computed
result violates a checked property.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
from importlib import metadata, resources

import jsonschema
import numpy as np
import scipy

from riskgen import __version__
from riskgen.chernoff import convergence_study, iterate
from riskgen.conjugate import CostFunction, biconjugate, conjugate
from riskgen.errors import ConfigError, DomainError, InvariantViolation
from riskgen.genlab import (
    compute_G_h,
    compute_g_h,
    generator_residual_first,
    generator_residual_second,
)
from riskgen.measures import DiscreteMeasure
from riskgen.onestep import FIRST_ORDER, MARTINGALE, PenaltySpec
from riskgen.oracles import (
    HjbProblem,
    entropic_oracle,
    hjb_solve,
    mc_drift_lower_bound,
    variance_scan_oracle,
)
from riskgen.reference import Drift, GridFunction, ReferenceModel, validate_conditions

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3
SUBCOMMANDS = ("conjugate", "validate-model", "gh", "Gh", "residual", "chernoff", "oracle", "suite")
DEFAULT_TOLERANCES = {
    "generator": 1e-6,
    "residual_factor": 0.2,
    "chernoff_factor": 1.0,
    "slack": 0.1,
    "conjugate": 1e-9,
}


class VerdictFailure(Exception):
    pass


# configuration


def load_schema():
    return json.loads(resources.files("riskgen").joinpath("experiment.schema.json").read_text())


def resolve_config_path(path):
    """A filesystem path, or the name of a shipped config such as ``ot-quadratic``."""
    if os.path.exists(path):
        return path
    shipped = resources.files("riskgen").joinpath("configs", f"{path}.json")
    if shipped.is_file():
        return str(shipped)
    raise ConfigError(f"config file {path!r} not found", field="config")


def load_config(path):
    try:
        with open(resolve_config_path(path), encoding="utf-8") as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", field="config") from exc
    validate_config(config)
    return config


def validate_config(config):
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "config"
        raise ConfigError(f"{where}: {err.message}", field=where)
    grid = config.get("grid")
    if grid is not None and not grid["xmax"] > grid["xmin"]:
        raise ConfigError("grid.xmax: must exceed grid.xmin", field="grid.xmax")


def config_hash(config):
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def require(config, key):
    if key not in config:
        raise ConfigError(f"{key}: required by this subcommand", field=key)
    return config[key]


def build_measure(spec, field):
    try:
        return DiscreteMeasure.from_atoms(spec["points"], spec["weights"], normalize=True)
    except (ValueError, DomainError) as exc:
        raise ConfigError(f"{field}: {exc}", field=field) from exc


def build_cost(spec, field="penalty.phi"):
    kind = spec["kind"]
    try:
        if kind == "quadratic":
            return CostFunction.quadratic(spec.get("gamma", 1.0))
        if kind == "power":
            return CostFunction.power(spec.get("p", 2.0), spec.get("scale", 1.0))
        tail = spec.get("tail", "quadratic")
        curvature = spec.get("tail_curvature", 1.0)
        if kind == "piecewise_linear":
            knots = [tuple(k) for k in require_field(spec, "knots", field)]
            return CostFunction.piecewise_linear(knots, tail=tail, tail_curvature=curvature)
        return CostFunction.tabulated(require_field(spec, "step", field), require_field(spec, "values", field),
                                      tail=tail, tail_curvature=curvature)
    except DomainError as exc:
        raise ConfigError(f"{field}: {exc}", field=field) from exc


def require_field(spec, key, field):
    if key not in spec:
        raise ConfigError(f"{field}.{key}: required for this kind", field=f"{field}.{key}")
    return spec[key]


def build_drift(spec):
    if spec is None or spec["kind"] == "zero":
        return Drift.zero()
    if spec["kind"] == "linear":
        return Drift.linear(spec.get("slope", 0.0), spec.get("intercept", 0.0))
    return Drift.tabulated(require_field(spec, "xs", "model.drift"), require_field(spec, "ys", "model.drift"))


def build_model(config, dx=None):
    """The reference model; gaussian increments default to the grid spacing when a grid is given."""
    spec = require(config, "model")
    kind = spec["kind"]
    drift = build_drift(spec.get("drift"))
    scheme = spec.get("scheme", "euler")
    try:
        if kind == "gaussian":
            step = spec.get("step", dx)
            return ReferenceModel.gaussian(require_field(spec, "s0", "model"), drift=drift, scheme=scheme,
                                           truncation=spec.get("truncation", 6.0), step=step)
        if kind == "compound_poisson":
            jumps = build_measure(require_field(spec, "jumps", "model"), "model.jumps")
            return ReferenceModel.compound_poisson(require_field(spec, "rate", "model"), jumps,
                                                   drift=drift, scheme=scheme)
        base = build_measure(require_field(spec, "base", "model"), "model.base")
        return ReferenceModel.scaled_fixed(base, drift=drift, scheme=scheme)
    except DomainError as exc:
        raise ConfigError(f"model: {exc}", field="model") from exc


def build_penalty(config):
    spec = require(config, "penalty")
    try:
        return PenaltySpec(spec["kind"], build_cost(spec["phi"]), p=spec.get("p"),
                           h0=spec.get("h0", math.inf))
    except DomainError as exc:
        raise ConfigError(f"penalty: {exc}", field="penalty") from exc


def build_grid(config):
    g = require(config, "grid")
    return g["xmin"], g["xmax"], g["dx"]


def build_test_function(config):
    """The terminal function on the grid with its first and second derivatives."""
    xmin, xmax, dx = build_grid(config)
    spec = require(config, "test_function")
    kind = spec["kind"]
    x = GridFunction.sample(lambda s: np.zeros_like(s), xmin, xmax, dx).x
    if kind == "sin":
        k = spec.get("frequency", 1.0)
        vals, d1, d2 = np.sin(k * x), k * np.cos(k * x), -k * k * np.sin(k * x)
    elif kind == "bump":
        c, w, a = spec.get("center", 0.0), spec.get("width", 1.0), spec.get("height", 1.0)
        vals = a * np.exp(-((x - c) / w) ** 2)
        d1 = -2.0 * (x - c) / w**2 * vals
        d2 = (4.0 * (x - c) ** 2 / w**4 - 2.0 / w**2) * vals
    else:
        if kind == "abs":
            vals = np.abs(x)
        else:
            vals = np.asarray(require_field(spec, "values", "test_function"), dtype=float)
            if vals.size != x.size:
                raise ConfigError(f"test_function.values: expected {x.size} values for the grid, got {vals.size}",
                                  field="test_function.values")
        d1 = np.gradient(vals, dx)
        d2 = np.gradient(d1, dx)
    return GridFunction(xmin, dx, vals), d1, d2


def tolerances(config):
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(config.get("tolerances", {}))
    return tol


# subcommands: each returns (header, rows, summary, verdicts)


def run_conjugate(config):
    if "cost" in config:
        c = build_cost(config["cost"], field="cost")
    else:
        c = build_cost(require(config, "penalty")["phi"])
    opts = config.get("conjugate", {})
    v_max, step = opts.get("v_max", 10.0), opts.get("step", 0.1)
    vs = np.linspace(0.0, v_max, int(round(v_max / step)) + 1)
    cv, cw, cc = c.evaluate(vs), conjugate(c, vs), biconjugate(c).evaluate(vs)
    tol = tolerances(config)["conjugate"]
    finite = np.isfinite(cv)
    young = np.where(finite[:, None], cv[:, None] + cw[None, :] - vs[:, None] * vs[None, :], np.inf)
    verdicts = {
        "fenchel_young": bool(np.min(young) >= -tol),
        "conjugate_nondecreasing": bool(np.all(np.diff(cw) >= -tol)),
        "conjugate_convex": bool(np.all(cw[2:] - 2.0 * cw[1:-1] + cw[:-2] >= -tol)),
        "sandwich": bool(np.all(cc >= c.evaluate(0.0) - tol) and np.all(cc[finite] <= cv[finite] + tol)),
    }
    rows = list(zip(vs, cv, cw, cc))
    return ("v", "cost", "conjugate", "biconjugate"), rows, {}, verdicts


def run_validate_model(config):
    model = build_model(config)
    hs = require(config, "hs")
    report = validate_conditions(model, hs)
    levels = report.tail_levels
    header = ("h", "m_quotient") + tuple(f"tail_quotient_{m:g}" for m in levels) + ("drift_defect",)
    rows = [(h, m, *t, d) for h, m, t, d in zip(report.hs, report.m_quotients, report.tail_quotients,
                                                  report.drift_defects)]
    verdicts = {f"condition_{k}": v == "pass" for k, v in report.verdicts.items()}
    return header, rows, {"report": report.as_dict()}, verdicts


def _generator_table(config, second):
    spec = build_penalty(config)
    if second and spec.kind not in MARTINGALE:
        raise ConfigError("penalty.kind: Gh needs a martingale penalty kind", field="penalty.kind")
    if not second and spec.kind not in FIRST_ORDER:
        raise ConfigError("penalty.kind: gh needs a first-order penalty kind", field="penalty.kind")
    model = build_model(config)
    hs = require(config, "hs")
    points = require(config, "curvatures" if second else "slopes")
    compute = compute_G_h if second else compute_g_h
    rows = []
    for h in hs:
        for z in points:
            value = compute(spec, model, h, z) / h
            analytic = spec.limit(z)
            rows.append((h, z, value, analytic, abs(value - analytic)))
    worst = max(r[4] for r in rows)
    tol = tolerances(config)["generator"]
    name = "G_h_over_h" if second else "g_h_over_h"
    header = ("h", "a" if second else "m", name, "analytic", "abs_error")
    return header, rows, {"max_abs_error": worst}, {"matches_analytic_limit": bool(worst <= tol)}


def run_gh(config):
    return _generator_table(config, second=False)


def run_Gh(config):
    return _generator_table(config, second=True)


def _decay_verdicts(values, slack, factor):
    return {
        "positive": all(v > 0 for v in values),
        "nonincreasing_within_slack": all(b <= (1.0 + slack) * a for a, b in zip(values, values[1:])),
        "overall_reduction": bool(values[-1] <= factor * values[0]),
    }


def run_residual(config):
    spec = build_penalty(config)
    _, _, dx = build_grid(config)
    model = build_model(config, dx=dx)
    f, d1, d2 = build_test_function(config)
    R = config.get("radius", 2.0)
    hs = require(config, "hs")
    if spec.kind in FIRST_ORDER:
        res = [generator_residual_first(spec, model, h, f, d1, R) for h in hs]
    else:
        res = [generator_residual_second(spec, model, h, f, d2, R) for h in hs]
    tol = tolerances(config)
    verdicts = _decay_verdicts(res, tol["slack"], tol["residual_factor"])
    return ("h", "residual"), list(zip(hs, res)), {"radius": R}, verdicts


def comparator_values(config, spec, model, f, t, ns):
    kind = require(config, "comparator")
    if kind == "entropic":
        if spec.kind != "ot" or spec.phi.kind != "quadratic":
            raise ConfigError("comparator: entropic oracle needs the ot kind with a quadratic cost",
                              field="comparator")
        return _oracle(entropic_oracle, model, spec.phi.gamma, t, f)
    if kind == "variance_scan":
        return _oracle(variance_scan_oracle, model, spec.phi, t, f)
    if kind == "hjb":
        return hjb_solve(HjbProblem.from_penalty(spec, model, f, t))
    return iterate(spec, model, t, max(ns), f).final


def _oracle(fn, model, param, t, f):
    try:
        return fn(model, param, t, f)
    except DomainError as exc:
        raise ConfigError(f"comparator: {exc}", field="comparator") from exc


def run_chernoff(config):
    spec = build_penalty(config)
    _, _, dx = build_grid(config)
    model = build_model(config, dx=dx)
    f, _, _ = build_test_function(config)
    t, ns = require(config, "t"), require(config, "ns")
    R = config.get("radius", 2.0)
    comparator = comparator_values(config, spec, model, f, t, ns)
    table = convergence_study(spec, model, t, ns, f, comparator, R)
    tol = tolerances(config)
    verdicts = {
        "nonincreasing_within_slack": table.monotone,
        "overall_reduction": bool(table.errors[-1] <= tol["chernoff_factor"] * table.errors[0]),
    }
    summary = {"trust_radius": table.trust_radius, "radius": R, "comparator": config["comparator"]}
    return ("n", "sup_error"), table.rows(), summary, verdicts


def run_oracle(config, seed):
    opts = require(config, "oracle")
    method = opts["method"]
    f, _, _ = build_test_function(config)
    model = build_model(config)
    t = require(config, "t")
    summary = {"method": method}
    try:
        if method == "monte_carlo":
            phi = build_penalty(config).phi
            controls = opts.get("controls", [0.0])
            pts = np.asarray(opts.get("points", [0.0]), dtype=float)
            res = mc_drift_lower_bound(model, phi, t, f, controls, opts.get("paths", 100_000), seed,
                                       x_points=pts, steps=opts.get("steps", 50))
            rows = list(zip(res.x, res.values, res.stderr, res.best_control))
            ok = bool(np.all(np.isfinite(res.values)))
            return ("x", "value", "stderr", "best_control"), rows, summary, {"finite": ok}
        spec = build_penalty(config)
        if method == "hjb":
            out = hjb_solve(HjbProblem.from_penalty(spec, model, f, t))
        elif method == "entropic":
            out = entropic_oracle(model, spec.phi.gamma, t, f)
        else:
            out = variance_scan_oracle(model, spec.phi, t, f)
    except DomainError as exc:
        raise ConfigError(f"oracle: {exc}", field="oracle") from exc
    return ("x", "value"), list(zip(out.x, out.values)), summary, {"finite": bool(np.all(np.isfinite(out.values)))}


def run_suite_command(config):
    from riskgen.suite import run_suite

    results = run_suite(config.get("criteria"))
    for r in results:
        print(r.line())
    rows = [(r.number, r.name, int(r.passed)) for r in results]
    summary = {"criteria": {str(r.number): {"name": r.name, "passed": r.passed, "seconds": r.seconds,
                                            "detail": r.detail} for r in results}}
    verdicts = {f"criterion_{r.number}": r.passed for r in results}
    return ("criterion", "name", "passed"), rows, summary, verdicts


# output


def format_cell(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.16e" % float(value)
    return str(value)


def render_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def versions():
    return {
        "riskgen": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "jsonschema": metadata.version("jsonschema"),
        "python": platform.python_version(),
    }


def output_paths(config, subcommand, out_dir):
    out = config.get("output", {})
    stem = subcommand.lower().replace("-", "_") if subcommand != "Gh" else "G_h"
    csv_path = out.get("csv", f"{stem}.csv")
    json_path = out.get("json", f"{stem}.json")
    return os.path.join(out_dir, csv_path), os.path.join(out_dir, json_path)


def execute(subcommand, config, out_dir=".", seed=None):
    if seed is not None:
        config = dict(config, seed=seed)
    seed = config.get("seed")
    runners = {
        "conjugate": run_conjugate,
        "validate-model": run_validate_model,
        "gh": run_gh,
        "Gh": run_Gh,
        "residual": run_residual,
        "chernoff": run_chernoff,
        "oracle": lambda c: run_oracle(c, seed),
        "suite": run_suite_command,
    }
    if subcommand == "oracle" and config.get("oracle", {}).get("method") == "monte_carlo" and seed is None:
        raise ConfigError("seed: Monte Carlo runs need a seed", field="seed")
    header, rows, summary, verdicts = runners[subcommand](config)
    csv_path, json_path = output_paths(config, subcommand, out_dir)
    report = {
        "subcommand": subcommand,
        "config_hash": config_hash(config),
        "versions": versions(),
        "seed": seed,
        "csv": os.path.basename(csv_path),
        "columns": list(header),
        "verdicts": verdicts,
        "passed": all(verdicts.values()),
        **summary,
    }
    write_atomic(csv_path, render_csv(header, rows))
    write_atomic(json_path, json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    failed = [k for k, v in verdicts.items() if not v]
    if failed:
        raise VerdictFailure(", ".join(failed))
    return report


def build_parser():
    parser = argparse.ArgumentParser(prog="riskgen", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="JSON config path or shipped config name")
    parser.add_argument("--out-dir", default=".", help="directory for the CSV and JSON reports")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        execute(args.subcommand, config, args.out_dir, args.seed)
    except ConfigError as exc:
        print(f"riskgen: invalid config ({exc.field}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"riskgen: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerdictFailure as exc:
        print(f"riskgen: check failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except InvariantViolation as exc:
        print(f"riskgen: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
