"""Relaxed iteration of compositions of averaged operators under a variable metric.

One step reads::

    y_n     = T_1n( T_2n( ... T_mn(x_n) + e_mn ... ) + e_2n ) + e_1n
    x_{n+1} = x_n + lambda_n (y_n - x_n)

where each ``T_in`` is averaged on ``(H, U_n^{-1})`` and ``phi_n`` is an
averagedness constant of the full composition. The driver records the
fixed-point residual ``r_n = ||T_1n...T_mn x_n - x_n||_{U_n^{-1}}`` and the
summand ``s_n = lambda_n (1/phi_n - lambda_n) r_n^2`` whose series must
converge; with a known solution it also records the per-factor displacement
defects and the quasi-Fejer quantities.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .exceptions import NumericalError, ParameterWindowError, ScheduleValidationError
from .metric import MetricSequence, loewner_geq, validate_sequence
from .operators import AveragedMap, compose_constants
from .reports import ValidationReport

log = logging.getLogger(__name__)

# relative slack on window endpoints, so parameters placed exactly on a
# bound computed by a different formula are not rejected by rounding
WINDOW_RTOL = 1e-12

CSV_COLUMNS = ["n", "lambda", "phi", "residual_u", "summand", "l2_residual", "wallclock_us"]


def _as_rule(value):
    if callable(value):
        return value
    if isinstance(value, (list, tuple, np.ndarray)):
        seq = [float(v) for v in value]
        return lambda n: seq[min(n, len(seq) - 1)]
    c = float(value)
    return lambda n: c


@dataclass
class OperatorSchedule:
    """Everything the iteration needs at step n.

    Parameters
    ----------
    m : int
        Number of factors.
    factors_at : callable ``n -> [T_1n, ..., T_mn]``
        ``T_1n`` is applied last. Each factor's ``metric_ctx`` is ``U_n``.
    lambda_at : float, sequence or callable ``n -> lambda_n``
    metrics : MetricSequence
    epsilon : float in ]0,1[
    phi_at : callable ``n -> phi_n``, optional
        Defaults to the folded composition constant of the factors.
    errors_at : callable ``(i, n) -> e_in`` (i = 1..m) or None
    error_budget : float or sequence of floats (one per factor), optional
        Declared bound on ``sum_n lambda_n ||e_in||_{U_n^{-1}}``.
    strong_window : bool
        Enforce ``lambda_n <= epsilon + (1 - epsilon)/phi_n`` in addition
        to ``lambda_n < 1/phi_n``.
    """

    m: int
    factors_at: Callable[[int], Sequence[AveragedMap]]
    lambda_at: Union[float, Sequence[float], Callable[[int], float]]
    metrics: MetricSequence
    epsilon: float = 1e-2
    phi_at: Optional[Callable[[int], float]] = None
    errors_at: Optional[Callable[[int, int], np.ndarray]] = None
    error_budget: Optional[Union[float, Sequence[float]]] = None
    strong_window: bool = True

    def __post_init__(self):
        self.lambda_at = _as_rule(self.lambda_at)
        if self.phi_at is not None:
            self.phi_at = _as_rule(self.phi_at)
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in ]0,1[, got {self.epsilon!r}")

    def phi(self, n, factors=None) -> float:
        if self.phi_at is not None:
            return float(self.phi_at(n))
        factors = self.factors_at(n) if factors is None else factors
        alphas = [T.alpha for T in factors]
        if any(a >= 1.0 for a in alphas):
            return 1.0
        return compose_constants(alphas)

    def budget(self, i):
        if self.error_budget is None:
            return None
        if isinstance(self.error_budget, (int, float)):
            return float(self.error_budget)
        return float(self.error_budget[i - 1])

    def lambda_upper(self, phi) -> float:
        """Largest admissible relaxation for this schedule's window mode."""
        if self.strong_window:
            return self.epsilon + (1.0 - self.epsilon) / phi
        return 1.0 / phi


def check_lambda_window(lam, phi, epsilon, strong_window=True, n=None):
    """Raise :class:`ParameterWindowError` unless lambda is admissible."""
    if not 0.0 < phi < 1.0:
        raise ParameterWindowError("phi window", f"phi={phi!r} must lie in ]0,1[", n)
    if not lam > 0.0:
        raise ParameterWindowError("lambda window", f"lambda={lam!r} must be positive", n)
    strict_top = 1.0 / phi
    if not lam < strict_top:
        raise ParameterWindowError(
            "lambda window", f"lambda={lam!r} must be < 1/phi={strict_top!r}", n)
    if strong_window:
        top = epsilon + (1.0 - epsilon) / phi
        if lam > top * (1.0 + WINDOW_RTOL):
            raise ParameterWindowError(
                "lambda window",
                f"lambda={lam!r} exceeds epsilon+(1-epsilon)/phi={top!r}", n)


@dataclass
class StopRule:
    """When to stop iterating.

    The residual test fires when ``r_n <= tol * (1 + ||x_0||)``; a negative
    ``tol`` disables it so that exactly ``max_iter`` steps run. The optional
    stagnation test fires when ``||x_n - x_{n-w}|| <= stagnation_tol`` for
    ``w = stagnation_window``.
    """

    tol: float = 1e-9
    max_iter: int = 100_000
    stagnation_window: Optional[int] = None
    stagnation_tol: float = 1e-8

    def to_json(self):
        return {"tol": self.tol, "max_iter": self.max_iter,
                "stagnation_window": self.stagnation_window,
                "stagnation_tol": self.stagnation_tol}


@dataclass
class IterationRecord:
    n: int
    x: np.ndarray
    y: np.ndarray
    lam: float
    phi: float
    residual_u: float
    summand: float
    l2_residual: float
    wallclock_us: float
    defects: Optional[tuple] = None
    dist_sq: Optional[float] = None
    fejer_beta: Optional[float] = None
    fejer_eps: Optional[float] = None
    eta: float = 0.0
    extra: Dict[str, float] = field(default_factory=dict)


@dataclass
class IterationTrace:
    """Append-only per-iteration records, dense in n from 0 to the stop index."""

    records: List[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""
    x_final: Optional[np.ndarray] = None
    violations: List[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, rec: IterationRecord):
        if rec.n != len(self.records):
            raise ValueError("trace records must be dense in n")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self) -> int:
        return len(self.records)

    def column(self, name) -> np.ndarray:
        if name in ("lambda", "lam"):
            name = "lam"
        if self.records and name in self.records[0].extra:
            return np.array([r.extra[name] for r in self.records])
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def summands(self) -> np.ndarray:
        return self.column("summand")

    @property
    def extra_columns(self) -> List[str]:
        return list(self.records[0].extra) if self.records else []

    def to_csv(self, path, timing: bool = False):
        """Write the trace; floats use 17 significant digits.

        Wall-clock times are written only with ``timing=True`` (otherwise 0)
        so that repeated runs give byte-identical files.
        """
        extra = self.extra_columns
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS + extra)
            for r in self.records:
                row = [str(r.n), _fmt(r.lam), _fmt(r.phi), _fmt(r.residual_u),
                       _fmt(r.summand), _fmt(r.l2_residual),
                       _fmt(r.wallclock_us if timing else 0.0)]
                row += [_fmt(r.extra[k]) for k in extra]
                w.writerow(row)


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _apply_chain(factors, x, errors=None):
    """Apply T_m first, then T_{m-1}, ...; returns the list of partial images.

    ``out[i]`` is ``T_{i+1} ... T_m x`` for i = 0..m-1 (0-based) and
    ``out[m] = x``.
    """
    m = len(factors)
    out = [None] * (m + 1)
    out[m] = x
    y = x
    for i in range(m - 1, -1, -1):
        y = factors[i].apply(y)
        if errors is not None and errors[i] is not None:
            y = y + errors[i]
        out[i] = y
    return out


def validate_schedule(schedule: OperatorSchedule, horizon: int) -> ValidationReport:
    """Check the step-size and error hypotheses for ``n < horizon``.

    Nonemptiness of the common fixed-point set cannot be decided in general
    and is recorded as assumed.
    """
    report = ValidationReport()
    horizon = max(int(horizon), 1)
    lam_ok, lam_bad, lam_msg = True, None, ""
    phi_ok, phi_bad = True, None
    partial = [0.0] * schedule.m
    for n in range(horizon):
        factors = schedule.factors_at(n)
        phi = schedule.phi(n, factors)
        lam = float(schedule.lambda_at(n))
        if phi_ok:
            consistent = 0.0 < phi < 1.0
            alphas = [T.alpha for T in factors]
            if consistent and len(factors) > 1 and all(a < 1 for a in alphas):
                consistent = phi >= compose_constants(alphas) * (1 - WINDOW_RTOL)
            elif consistent and len(factors) > 1:
                consistent = False
            if not consistent:
                phi_ok, phi_bad = False, n
        if lam_ok:
            try:
                check_lambda_window(lam, phi, schedule.epsilon, schedule.strong_window, n)
            except ParameterWindowError as exc:
                lam_ok, lam_bad, lam_msg = False, n, str(exc)
        if schedule.errors_at is not None:
            U = schedule.metrics[n]
            for i in range(1, schedule.m + 1):
                e = schedule.errors_at(i, n)
                if e is not None:
                    partial[i - 1] += lam * U.inv_norm(e)
    report.add("phi in ]0,1[ and a valid composition constant", phi_ok, phi_bad)
    top = "epsilon+(1-epsilon)/phi" if schedule.strong_window else "1/phi"
    report.add(f"lambda window ]0, {top}]", lam_ok, lam_bad, lam_msg)
    report.extend(validate_sequence(schedule.metrics, horizon=horizon))
    for i, s in enumerate(partial, start=1):
        b = schedule.budget(i)
        ok = b is None or s <= b
        report.add(f"error summability e_{i}", ok, None,
                   f"partial sum {s:.6g} over {horizon} steps" + ("" if b is None else f", budget {b:.6g}"))
    report.data["error_partial_sums"] = partial
    report.assumed.append("common fixed-point set S is nonempty")
    return report


def iterate(schedule: OperatorSchedule, x0, stop: Optional[StopRule] = None, *,
            reference=None, monitor: Optional[Callable[[int, np.ndarray], dict]] = None,
            strict: bool = True, validate_horizon: int = 1) -> IterationTrace:
    """Run the relaxed composition iteration.

    Parameters
    ----------
    schedule : OperatorSchedule
    x0 : array
    stop : StopRule, optional
    reference : array, optional
        A known point of the fixed-point set. Enables the per-factor defect
        and quasi-Fejer monitors.
    monitor : callable ``(n, x_n) -> dict``, optional
        Extra scalar columns recorded per iteration.
    strict : bool
        Raise on hypothesis violations. Otherwise they are appended to
        ``trace.violations`` and the run continues.
    validate_horizon : int
        Horizon of the up-front :func:`validate_schedule` call; windows are
        additionally checked at every iteration.
    """
    stop = stop or StopRule()
    x = np.array(x0, dtype=float)
    if x.shape != (schedule.metrics.dim,):
        raise ValueError(f"x0 has shape {x.shape}, metrics have dimension {schedule.metrics.dim}")
    trace = IterationTrace()

    report = validate_schedule(schedule, validate_horizon)
    trace.meta["validation"] = report.to_dict()
    if not report.passed:
        if strict:
            raise ScheduleValidationError(report)
        trace.violations.extend(c.describe() for c in report.failures())

    threshold = stop.tol * (1.0 + float(np.linalg.norm(x)))
    ref = None if reference is None else np.array(reference, dtype=float)
    budgets_used = [0.0] * schedule.m
    history = []
    trace.stop_reason = "max_iter"

    for n in range(stop.max_iter):
        t0 = time.perf_counter()
        U = schedule.metrics[n]
        factors = schedule.factors_at(n)
        if len(factors) != schedule.m:
            raise ValueError(f"factors_at({n}) returned {len(factors)} maps, expected {schedule.m}")
        phi = schedule.phi(n, factors)
        lam = float(schedule.lambda_at(n))
        try:
            check_lambda_window(lam, phi, schedule.epsilon, schedule.strong_window, n)
            if n > 0 and not schedule.metrics.is_constant:
                prev = schedule.metrics[n - 1]
                scale = 1.0 + schedule.metrics.eta_at(n - 1)
                if not loewner_geq(U.scaled(scale), prev):
                    raise ParameterWindowError(
                        "metric ordering", "(1+eta_n) U_{n+1} >= U_n violated", n - 1)
        except ParameterWindowError as exc:
            if strict:
                raise
            if not any(v.startswith(exc.window) for v in trace.violations):
                trace.violations.append(str(exc))

        chain = _apply_chain(factors, x)
        Tx = chain[0]
        if schedule.errors_at is not None:
            errs = [schedule.errors_at(i, n) for i in range(1, schedule.m + 1)]
            y = _apply_chain(factors, x, errs)[0]
            for i, e in enumerate(errs):
                if e is not None:
                    budgets_used[i] += lam * U.inv_norm(e)
                    b = schedule.budget(i + 1)
                    if b is not None and budgets_used[i] > b:
                        msg = f"error summability e_{i + 1} at n={n}: partial sum exceeds budget {b!r}"
                        if strict:
                            raise ParameterWindowError("error summability", msg, n)
                        if msg not in trace.violations:
                            trace.violations.append(msg)
        else:
            y = Tx

        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise NumericalError(n)

        d = Tx - x
        r = U.inv_norm(d)
        s = lam * (1.0 / phi - lam) * r * r
        rec = IterationRecord(n, x.copy(), y.copy(), lam, phi, r, s,
                              float(np.linalg.norm(d)), 0.0, eta=schedule.metrics.eta_at(n))
        if ref is not None:
            rchain = _apply_chain(factors, ref)
            defects = []
            for i, T in enumerate(factors):
                # (Id - T_i) T_{i+} evaluated at x_n and at the reference point
                dx = chain[i + 1] - chain[i]
                dr = rchain[i + 1] - rchain[i]
                a = T.alpha
                defects.append(lam * (1.0 - a) / a * U.inv_quad(dx - dr))
            rec.defects = tuple(defects)
            rec.dist_sq = U.inv_quad(x - ref)
            rec.fejer_beta = max(defects)
            eps = schedule.epsilon
            rec.fejer_eps = lam * (1.0 / eps - 1.0) * (1.0 / phi - lam) * r * r
        if monitor is not None:
            rec.extra = {k: float(v) for k, v in monitor(n, x).items()}
        trace.append(rec)

        if r <= threshold:
            trace.stop_reason = "residual"
            rec.wallclock_us = (time.perf_counter() - t0) * 1e6
            break
        if stop.stagnation_window:
            history.append(x.copy())
            w = stop.stagnation_window
            if len(history) > w:
                if np.linalg.norm(history[-1] - history[-1 - w]) <= stop.stagnation_tol:
                    trace.stop_reason = "stagnation"
                    rec.wallclock_us = (time.perf_counter() - t0) * 1e6
                    break
                history.pop(0)
        x = x + lam * (y - x)
        rec.wallclock_us = (time.perf_counter() - t0) * 1e6
        if not np.all(np.isfinite(x)):
            raise NumericalError(n + 1)

    trace.x_final = x
    trace.meta["stop"] = stop.to_json()
    trace.meta["iterations"] = len(trace)
    trace.meta["stop_reason"] = trace.stop_reason
    if ref is not None and trace.records:
        # distance of the final iterate, for the last Fejer step
        trace.meta["final_dist_sq"] = schedule.metrics[len(trace)].inv_quad(x - ref) \
            if trace.stop_reason == "max_iter" else trace.records[-1].dist_sq
    log.debug("iterate: %d iterations, stop=%s", len(trace), trace.stop_reason)
    return trace


# ------------------------------------------------------------------ monitors

@dataclass
class MonitorReport:
    partial_sums: np.ndarray
    total: float
    tail_increment: float
    tail_exponent: float
    cauchy: bool
    consistent: bool
    note: str = ""

    def to_dict(self):
        return {"total": self.total, "tail_increment": self.tail_increment,
                "tail_exponent": self.tail_exponent, "cauchy": self.cauchy,
                "consistent": self.consistent, "note": self.note}


def summability_monitor(trace_or_values, window: int = 100, tol: float = 1e-10) -> MonitorReport:
    """Diagnose whether a nonnegative series looks summable.

    The flag is true when the tail increment over the last ``window`` terms
    is below ``tol`` (Cauchy test) or when a power law fitted to the last
    half of the positive terms decays faster than ``n^{-1}``. Negative terms
    make the flag false: they only occur when a relaxation window was
    violated.
    """
    if isinstance(trace_or_values, IterationTrace):
        s = trace_or_values.summands
    else:
        s = np.asarray(trace_or_values, dtype=float)
    if s.size == 0:
        raise ValueError("empty series")
    partial = np.cumsum(s)
    total = float(partial[-1])
    w = min(window, s.size)
    tail = float(np.sum(s[-w:]))
    scale = float(np.max(np.abs(s)))
    if np.any(s < -1e-14 * max(scale, 1e-300)):
        return MonitorReport(partial, total, tail, math.nan, False, False,
                             "negative summands: relaxation outside its window")
    if not np.all(np.isfinite(s)):
        return MonitorReport(partial, total, tail, math.nan, False, False, "non-finite summands")
    cauchy = s.size >= window and tail < tol
    half = s[s.size // 2:]
    idx = np.arange(s.size // 2, s.size) + 1.0
    pos = half > 0
    note = ""
    if s[-1] == 0.0:
        exponent = -math.inf
        note = "fixed point reached"
    elif np.count_nonzero(pos) >= 3 and idx[pos][-1] > idx[pos][0]:
        exponent = float(np.polyfit(np.log(idx[pos]), np.log(half[pos]), 1)[0])
    else:
        exponent = math.nan
    consistent = bool(cauchy or (not math.isnan(exponent) and exponent < -1.0))
    return MonitorReport(partial, total, tail, exponent, bool(cauchy), consistent, note)


@dataclass
class FejerReport:
    step_gaps: np.ndarray     # (1+eta_n)^{-1} d_{n+1} - d_n
    perturbed_gaps: np.ndarray    # (1+eta_n)^{-1} d_{n+1} - (d_n - beta_n + eps_n)
    worst_step: float
    worst_perturbed: float


def fejer_monitor(trace: IterationTrace) -> FejerReport:
    """Quasi-Fejer quantities of a run made with a ``reference`` point.

    Valid for zero-error runs; both gap arrays should be <= 0 up to rounding.
    Traces without per-factor defects (primal-dual runs) only get step gaps;
    their ``perturbed_gaps`` are NaN.
    """
    recs = trace.records
    if not recs or recs[0].dist_sq is None:
        raise ValueError("trace was recorded without a reference point")
    d = [r.dist_sq for r in recs]
    if trace.stop_reason == "max_iter":
        d.append(trace.meta["final_dist_sq"])
    k = len(d) - 1
    step = np.empty(k)
    pert = np.empty(k)
    for n in range(k):
        r = recs[n]
        nxt = d[n + 1] / (1.0 + r.eta)
        step[n] = nxt - d[n]
        if r.fejer_beta is None:
            pert[n] = math.nan
        else:
            pert[n] = nxt - (d[n] - r.fejer_beta + r.fejer_eps)
    worst_step = float(step.max()) if k else -math.inf
    worst_p = float(np.nanmax(pert)) if k and not np.all(np.isnan(pert)) else -math.inf
    return FejerReport(step, pert, worst_step, worst_p)


def cauchy_diagnostic(trace: IterationTrace, window: int = 50, tol: float = 1e-8) -> bool:
    """Iterates are Cauchy in norm over the last ``window`` iterations."""
    xs = [r.x for r in trace.records[-(window + 1):]] + [trace.x_final]
    if len(xs) < 2:
        return True
    return bool(max(np.linalg.norm(a - xs[-1]) for a in xs) <= tol)
