"""Batch command line: validate and run JSON run-specs, write traces.

Run-spec layout (``schema_version`` 1)::

    {
      "schema_version": 1,
      "solver": "fb" | "fb_extended" | "pd" | "driver",
      "problem": {"name": "lasso", "seed": 42, ...builder arguments},
      "params": {...solver parameters...},
      "stop": {"tol": 1e-9, "max_iter": 100000},
      "output": "runs/lasso",
      "seed": 0
    }

Exit codes: 0 success, 1 malformed spec or unknown problem, 2 violated
hypothesis (strict mode), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .driver import StopRule, fejer_monitor, iterate, summability_monitor, validate_schedule
from .exceptions import (NumericalError, ParameterWindowError, ScheduleValidationError,
                         SplittingError, UnknownProblemError)
from .fb import FBParams, fb_residuals, solve_fb, solve_fb_extended, validate_fb_params
from .metric import Metric, MetricSequence, metric_sequence_from_json
from .pd import PDParams, pd_monitor, pd_parameters, solve_pd, validate_pd_params
from .problems import DESCRIPTIONS, REGISTRY, get_problem, jacobi_metric, projection_schedule
from .reports import ValidationReport

log = logging.getLogger("metric_splitting")

SCHEMA_VERSION = 1
TRACE_SCHEMA_VERSION = 1
SOLVERS = ("driver", "fb", "fb_extended", "pd")
OUT_ENV = "METRIC_SPLITTING_OUT"

EXIT_OK, EXIT_SPEC, EXIT_HYPOTHESIS, EXIT_NUMERICAL = 0, 1, 2, 3


class SpecError(SplittingError, ValueError):
    """The run-spec is malformed."""


# ------------------------------------------------------------------ loading

def load_spec(path) -> dict:
    """Read a run-spec, or the ``spec`` stored in a run's metadata file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read spec {path}: {exc}") from exc
    if isinstance(doc, dict) and "solver" not in doc and isinstance(doc.get("spec"), dict):
        doc = doc["spec"]
    check_spec(doc)
    return doc


def check_spec(doc) -> None:
    if not isinstance(doc, dict):
        raise SpecError("spec must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SpecError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    if doc.get("solver") not in SOLVERS:
        raise SpecError(f"solver must be one of {SOLVERS}, got {doc.get('solver')!r}")
    prob = doc.get("problem")
    if not isinstance(prob, dict) or "name" not in prob:
        raise SpecError("problem must be an object with a 'name'")
    for key in ("params", "stop"):
        if key in doc and not isinstance(doc[key], dict):
            raise SpecError(f"{key} must be an object")


def build_instance(spec):
    kwargs = dict(spec["problem"])
    name = kwargs.pop("name")
    if name not in REGISTRY:
        raise UnknownProblemError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}")
    try:
        return get_problem(name, **kwargs)
    except TypeError as exc:
        raise SpecError(f"bad arguments for problem {name!r}: {exc}") from exc


def build_metrics(doc, dim, instance=None) -> MetricSequence:
    """Metric specs: ``"identity"``, ``{"scale": c}``, ``{"kind": "jacobi"}``
    (lasso only) or a metric-sequence document with ``kind`` and ``metrics``."""
    if doc is None or doc == "identity":
        return MetricSequence.constant(Metric.identity(dim))
    if isinstance(doc, (int, float)):
        return MetricSequence.constant(Metric.identity(dim, float(doc)))
    if not isinstance(doc, dict):
        raise SpecError(f"cannot interpret metric spec {doc!r}")
    if "scale" in doc and "kind" not in doc:
        return MetricSequence.constant(Metric.identity(dim, float(doc["scale"])))
    if doc.get("kind") == "jacobi":
        if instance is None or "M" not in instance.data:
            raise SpecError("the jacobi metric needs a least-squares problem")
        return MetricSequence.constant(jacobi_metric(instance.data["M"]))
    seq = metric_sequence_from_json(doc)
    if seq.dim != dim:
        raise SpecError(f"metric dimension {seq.dim} does not match problem dimension {dim}")
    return seq


def _decay_rule(doc, dim, rng):
    """``{"scale": s, "decay": q}`` -> ``n -> s q^n u`` with a seeded unit vector u."""
    if doc is None:
        return None
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    s, q = float(doc.get("scale", 1.0)), float(doc.get("decay", 0.5))
    return lambda n: s * q ** n * u


def _lambda_value(value):
    return list(value) if isinstance(value, list) else value


def build_stop(spec) -> StopRule:
    doc = spec.get("stop", {})
    try:
        return StopRule(**doc)
    except TypeError as exc:
        raise SpecError(f"bad stop block: {exc}") from exc


def _x0(params, dim, default=None):
    if "x0" in params:
        x0 = np.asarray(params["x0"], dtype=float)
        if x0.shape != (dim,):
            raise SpecError(f"x0 must have length {dim}")
        return x0
    return np.zeros(dim) if default is None else np.asarray(default, dtype=float)


def _fb_params(spec, instance, mode):
    p = dict(spec.get("params", {}))
    prob = instance.problem
    rng = np.random.default_rng(spec.get("seed", 0))
    metrics = build_metrics(p.get("metric"), prob.dim, instance)
    if "gamma" in p:
        gamma = p["gamma"]
    elif "gamma_over_beta" in p:
        gamma = float(p["gamma_over_beta"]) * prob.beta
    else:
        gamma = prob.beta
    errors = p.get("errors", {})
    lam = p.get("mu", 0.5) if mode == "extended_step" else _lambda_value(p.get("lambda", 1.0))
    return FBParams(metrics, gamma, lam, epsilon=float(p.get("epsilon", 1e-2)),
                    a=_decay_rule(errors.get("a"), prob.dim, rng),
                    b=_decay_rule(errors.get("b"), prob.dim, rng), mode=mode,
                    error_budget=errors.get("budget"))


def _pd_params(spec, instance):
    p = dict(spec.get("params", {}))
    prob = instance.problem
    rng = np.random.default_rng(spec.get("seed", 0))
    primal = build_metrics(p.get("primal_metric", {"scale": 0.35}), prob.dim)
    duals = p.get("dual_metrics", [p.get("primal_metric", {"scale": 0.35})] * prob.m)
    if len(duals) != prob.m:
        raise SpecError(f"{len(duals)} dual metrics for {prob.m} blocks")
    dual = [build_metrics(d, g) for d, g in zip(duals, prob.dual_dims)]
    errors = p.get("errors", {})
    a = _decay_rule(errors.get("a"), prob.dim, rng)
    c = _decay_rule(errors.get("c"), prob.dim, rng)
    b_rules = [_decay_rule(errors.get("b"), g, rng) for g in prob.dual_dims]
    d_rules = [_decay_rule(errors.get("d"), g, rng) for g in prob.dual_dims]
    b = None if errors.get("b") is None else (lambda i, n: b_rules[i - 1](n))
    d = None if errors.get("d") is None else (lambda i, n: d_rules[i - 1](n))
    return PDParams(primal, dual, epsilon=float(p.get("epsilon", 1e-2)),
                    lam=_lambda_value(p.get("lambda", "midpoint")), a=a, c=c, b=b, d=d,
                    zeta_variant=p.get("zeta_variant", "delta_numerator"))


def _driver_schedule(spec, instance):
    p = dict(spec.get("params", {}))
    if not isinstance(instance.problem, list):
        raise SpecError("solver 'driver' needs a projection problem such as halfspace_pair")
    return projection_schedule(instance, float(p.get("epsilon", 0.1)),
                               _lambda_value(p.get("lambda", "top")))


# ------------------------------------------------------------------ commands

def validate_spec(spec) -> ValidationReport:
    """All hypothesis checks of a spec over its ``validate_horizon`` (default 100)."""
    instance = build_instance(spec)
    horizon = int(spec.get("validate_horizon", 100))
    solver = spec["solver"]
    try:
        if solver in ("fb", "fb_extended"):
            params = _fb_params(spec, instance, "overrelaxed" if solver == "fb" else "extended_step")
            return validate_fb_params(instance.problem, params, horizon)
        if solver == "pd":
            return validate_pd_params(instance.problem, _pd_params(spec, instance), horizon)
        return validate_schedule(_driver_schedule(spec, instance), horizon)
    except ParameterWindowError as exc:
        report = ValidationReport()
        report.add(exc.window, False, exc.n, str(exc))
        return report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def execute(spec, strict=True):
    """Run a spec; returns ``(trace, metadata)``."""
    instance = build_instance(spec)
    stop = build_stop(spec)
    solver = spec["solver"]
    p = spec.get("params", {})
    meta = {"trace_schema_version": TRACE_SCHEMA_VERSION, "spec": spec,
            "problem": instance.to_json(), "versions": versions()}
    if solver in ("fb", "fb_extended"):
        prob = instance.problem
        if solver == "fb":
            params = _fb_params(spec, instance, "overrelaxed")
            result = solve_fb(prob, params, _x0(p, prob.dim), stop, strict=strict)
        else:
            params = _fb_params(spec, instance, "extended_step")
            result = solve_fb_extended(prob, params, _x0(p, prob.dim), stop, strict=strict)
        trace = result.trace
        meta["validation"] = result.report.to_dict()
        meta["phi"] = {"phi_0": result.report.data.get("phi_0"),
                       "closed_form": "2 beta / (4 beta - gamma ||U||)"
                       + (" times mu" if solver == "fb_extended" else "")}
        meta["monitors"] = fb_residuals(result).to_dict()
        if prob.known_solution is not None:
            meta["linf_to_reference"] = float(np.max(np.abs(result.x_final - prob.known_solution)))
    elif solver == "pd":
        prob = instance.problem
        params = _pd_params(spec, instance)
        v0 = p.get("v0")
        result = solve_pd(prob, params, _x0(p, prob.dim), v0, stop, strict=strict)
        trace = result.trace
        meta["validation"] = result.report.to_dict()
        meta["phi"] = {"parameters_0": pd_parameters(prob, params, 0),
                       "closed_form": "phi = 2 beta / (4 beta - 1/zeta), "
                                      "zeta per zeta_variant"}
        meta["zeta_variant"] = params.zeta_variant
        meta["kkt"] = result.residuals().to_dict()
        meta["monitors"] = {k: v.to_dict() for k, v in pd_monitor(result).items()}
        if prob.known_solution is not None:
            meta["linf_to_reference"] = float(np.max(np.abs(result.x_final - prob.known_solution[0])))
    else:
        schedule = _driver_schedule(spec, instance)
        trace = iterate(schedule, _x0(p, 2, default=[3.0, 1.0]), stop,
                        reference=instance.solution, strict=strict)
        meta["validation"] = trace.meta["validation"]
        meta["phi"] = {"phi_0": schedule.phi(0), "closed_form": "compose_constants([1/2, 1/2])"}
        fm = fejer_monitor(trace)
        meta["monitors"] = {"summability": summability_monitor(trace).to_dict(),
                            "fejer_worst_step": fm.worst_step,
                            "fejer_worst_perturbed": fm.worst_perturbed}
    meta.update(iterations=len(trace), stop_reason=trace.stop_reason,
                violations=list(trace.violations), x_final=trace.x_final)
    return trace, _jsonable(meta)


def versions():
    return {"metric_splitting": __version__, "numpy": np.__version__,
            "python": platform.python_version()}


def output_dir(spec, spec_path, batch=False) -> Path:
    env = os.environ.get(OUT_ENV)
    stem = Path(spec_path).stem
    if env:
        return Path(env) / stem if batch else Path(env)
    return Path(spec.get("output") or Path("runs") / stem)


def run_one(spec_path, strict=True, timing=False, batch=False) -> int:
    try:
        spec = load_spec(spec_path)
        trace, meta = execute(spec, strict=strict)
    except (ScheduleValidationError, ParameterWindowError) as exc:
        print(f"hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SplittingError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    out = output_dir(spec, spec_path, batch)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv", timing=timing)
    with open(out / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    for v in meta["violations"]:
        print(f"warning: {v}", file=sys.stderr)
    print(f"{spec_path}: {meta['iterations']} iterations ({meta['stop_reason']}) -> {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    strict = not args.allow_violations
    if len(args.specs) == 1 or args.jobs <= 1:
        codes = [run_one(s, strict, args.timing, len(args.specs) > 1) for s in args.specs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(run_one, s, strict, args.timing, True) for s in args.specs]
            codes = [f.result() for f in futures]
    return max(codes)


def cmd_validate(args) -> int:
    code = EXIT_OK
    for path in args.specs:
        try:
            spec = load_spec(path)
            report = validate_spec(spec)
        except (SplittingError, ValueError, KeyError, TypeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            code = max(code, EXIT_SPEC)
            continue
        print(f"== {path}")
        print(report.summary())
        if not report.passed:
            code = max(code, EXIT_HYPOTHESIS)
    return code


def cmd_list(args) -> int:
    for name in sorted(REGISTRY):
        print(f"{name:16s} {DESCRIPTIONS.get(name, '')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metric-splitting",
                                     description="Variable-metric splitting runs from JSON specs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute run-specs and write trace.csv and metadata.json")
    run.add_argument("specs", nargs="+", help="run-spec JSON files (or metadata.json of a past run)")
    run.add_argument("--allow-violations", action="store_true",
                     help="run despite violated hypotheses, reporting them as warnings")
    run.add_argument("--jobs", type=int, default=1, help="parallel runs in batch mode")
    run.add_argument("--timing", action="store_true",
                     help="record wall-clock times (traces are then not reproducible byte for byte)")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check all hypotheses without running")
    val.add_argument("specs", nargs="+")
    val.set_defaults(func=cmd_validate)

    lst = sub.add_parser("list-problems", help="list registered problem instances")
    lst.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
