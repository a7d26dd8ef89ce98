"""Variable-metric forward-backward splitting for ``0 in Ax + Bx``.

Two modes are provided:

``overrelaxed``
    ``x+ = x + lam (J_{gam U A}(x - gam U (Bx + b)) + a - x)`` with
    ``gam in [eps, 2 beta / ((1+eps) ||U||)]`` and
    ``lam in [eps, 1 + (1-eps)(1 - gam ||U|| / (2 beta))]``. Relaxations above
    1 are allowed.

``extended_step``
    ``x+ = x + mu (J_{gam U A}(x - gam U Bx) - x)`` with ``gam ||U|| < 4 beta``
    and ``2 mu beta / (4 beta - ||U|| gam) <= 1 - eps``, which allows step
    sizes beyond the usual ``2 beta`` bound when ``mu < 1``.

Both run on :func:`metric_splitting.driver.iterate`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .driver import (IterationTrace, MonitorReport, OperatorSchedule, StopRule,
                     WINDOW_RTOL, _as_rule, iterate, summability_monitor)
from .exceptions import ParameterWindowError, ScheduleValidationError
from .metric import Metric, MetricSequence, validate_sequence
from .operators import (AveragedMap, CocoerciveOp, MonotoneOp, forward_map,
                        resolvent_map, resolvent_step)
from .reports import ValidationReport

MODES = ("overrelaxed", "extended_step")


@dataclass
class FBProblem:
    """Find x with ``0 in Ax + Bx``; ``B`` is ``beta``-cocoercive."""

    A: MonotoneOp
    B: CocoerciveOp
    known_solution: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.A.dim != self.B.dim:
            raise ValueError("A and B act on spaces of different dimension")
        if self.known_solution is not None:
            self.known_solution = np.asarray(self.known_solution, dtype=float)
            res = fb_map_residual(self, self.known_solution)
            if res > 1e-8:
                raise ValueError(f"known_solution is not a zero of A+B (FB residual {res:.3e})")

    @property
    def beta(self) -> float:
        return self.B.beta

    @property
    def dim(self) -> int:
        return self.A.dim


def fb_map_residual(problem: FBProblem, x, gamma=None, U: Optional[Metric] = None) -> float:
    """``||J_{gam U A}(x - gam U Bx) - x||``; zero exactly on zer(A+B)."""
    x = np.asarray(x, dtype=float)
    U = U if U is not None else Metric.identity(problem.dim)
    gamma = problem.beta if gamma is None else gamma
    p = resolvent_step(problem.A, gamma, U, x - gamma * U.apply(problem.B.apply(x)))
    return float(np.linalg.norm(p - x))


def fb_phi(gamma: float, u_norm: float, beta: float) -> float:
    """Averagedness constant ``2 beta / (4 beta - gamma ||U||)`` of the FB map."""
    t = gamma * u_norm
    if not t < 4.0 * beta:
        raise ParameterWindowError("extended step condition",
                                   f"gamma*||U||={t!r} must be < 4*beta={4 * beta!r}")
    return 2.0 * beta / (4.0 * beta - t)


def gamma_window(beta, u_norm, epsilon):
    return epsilon, 2.0 * beta / ((1.0 + epsilon) * u_norm)


def lambda_window(gamma, u_norm, beta, epsilon):
    return epsilon, 1.0 + (1.0 - epsilon) * (1.0 - gamma * u_norm / (2.0 * beta))


def extended_phi(mu, gamma, u_norm, beta) -> float:
    return mu * fb_phi(gamma, u_norm, beta)


@dataclass
class FBParams:
    """Step sizes, relaxations, metrics and error sequences.

    ``gamma`` and ``lam`` accept a constant, a list (last value repeats) or a
    rule ``n -> value``. In overrelaxed mode ``lam="top"`` selects the top of
    the relaxation window at every n. In extended-step mode ``lam`` is the
    relaxation ``mu_n``.

    ``b`` is an error in the operator-evaluation space: it enters the
    iteration as ``-gamma_n U_n b_n``.
    """

    metrics: MetricSequence
    gamma: object
    lam: object = 1.0
    epsilon: float = 1e-2
    a: Optional[Callable[[int], np.ndarray]] = None
    b: Optional[Callable[[int], np.ndarray]] = None
    mode: str = "overrelaxed"
    error_budget: Optional[tuple] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if isinstance(self.metrics, Metric):
            self.metrics = MetricSequence.constant(self.metrics)
        self._gamma = _as_rule(self.gamma)
        if isinstance(self.lam, str):
            if self.lam != "top":
                raise ValueError(f"unknown relaxation policy {self.lam!r}")
            self._lam = None
        else:
            self._lam = _as_rule(self.lam)

    def gamma_at(self, n) -> float:
        return float(self._gamma(n))

    def lambda_at(self, n, beta) -> float:
        if self._lam is None:
            if self.mode != "overrelaxed":
                raise ValueError("lam='top' is only defined in overrelaxed mode")
            U = self.metrics[n]
            return lambda_window(self.gamma_at(n), U.norm_ub, beta, self.epsilon)[1]
        return float(self._lam(n))

    @property
    def is_constant(self) -> bool:
        return (self.metrics.is_constant and not callable(self.gamma)
                and not isinstance(self.gamma, (list, tuple, np.ndarray))
                and not callable(self.lam)
                and not isinstance(self.lam, (list, tuple, np.ndarray)))


def _le(a, b):
    return a <= b * (1.0 + WINDOW_RTOL) + 1e-300


def _ge(a, b):
    return a >= b * (1.0 - WINDOW_RTOL)


def validate_fb_params(problem: FBProblem, params: FBParams, horizon: int = 1) -> ValidationReport:
    """Check every window of the chosen mode for ``n < horizon``."""
    report = ValidationReport()
    beta, eps = problem.beta, params.epsilon
    if params.mode == "overrelaxed":
        top = min(0.5, beta)
        report.add("epsilon window ]0, min{1/2, beta}[", 0 < eps < top, None,
                   f"epsilon={eps!r}, min{{1/2, beta}}={top!r}")
    else:
        report.add("epsilon window ]0, 1/2[", 0 < eps < 0.5, None, f"epsilon={eps!r}")
    first = {}
    horizon = max(int(horizon), 1)
    for n in range(horizon):
        U = params.metrics[n]
        u = U.norm_ub
        g = params.gamma_at(n)
        lam = params.lambda_at(n, beta)
        if params.mode == "overrelaxed":
            glo, ghi = gamma_window(beta, u, eps)
            if not (_ge(g, glo) and _le(g, ghi)):
                first.setdefault("gamma window", (n, f"gamma={g!r} not in [{glo!r}, {ghi!r}]"))
            llo, lhi = lambda_window(g, u, beta, eps)
            if not (_ge(lam, llo) and _le(lam, lhi)):
                first.setdefault("lambda window", (n, f"lambda={lam!r} not in [{llo!r}, {lhi!r}]"))
        else:
            if not _ge(g, eps):
                first.setdefault("gamma window", (n, f"gamma={g!r} < epsilon={eps!r}"))
            if not _ge(lam, eps):
                first.setdefault("mu window", (n, f"mu={lam!r} < epsilon={eps!r}"))
            if not g * u < 4 * beta:
                first.setdefault("extended step condition",
                                 (n, f"gamma*||U||={g * u!r} must be < 4*beta={4 * beta!r}"))
            else:
                phi = extended_phi(lam, g, u, beta)
                if not _le(phi, 1 - eps):
                    first.setdefault("extended step condition",
                                     (n, f"phi={phi!r} exceeds 1-epsilon={1 - eps!r}"))
    names = (["gamma window", "lambda window"] if params.mode == "overrelaxed"
             else ["gamma window", "mu window", "extended step condition"])
    for name in names:
        bad = first.get(name)
        report.add(name, bad is None, None if bad is None else bad[0], "" if bad is None else bad[1])
    report.extend(validate_sequence(params.metrics, horizon=max(horizon, params.metrics.horizon())))
    for label, seq in (("a", params.a), ("b", params.b)):
        if seq is not None:
            s = float(sum(np.linalg.norm(seq(n)) for n in range(horizon)))
            report.data[f"error_{label}_partial_sum"] = s
    report.assumed.append("zer(A+B) is nonempty")
    report.data["mode"] = params.mode
    if params.mode == "overrelaxed":
        report.data["phi_0"] = fb_phi(params.gamma_at(0), params.metrics[0].norm_ub, beta) \
            if params.gamma_at(0) * params.metrics[0].norm_ub < 4 * beta else None
    else:
        g, u = params.gamma_at(0), params.metrics[0].norm_ub
        report.data["phi_0"] = extended_phi(params.lambda_at(0, beta), g, u, beta) \
            if g * u < 4 * beta else None
    return report


@dataclass
class FBResult:
    trace: IterationTrace
    x_final: np.ndarray
    problem: FBProblem
    params: FBParams
    report: ValidationReport = field(default_factory=ValidationReport)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def rho(self) -> np.ndarray:
        """Forward-backward residuals ``||J(x_n - gam U B x_n) - x_n||``."""
        l2 = self.trace.column("l2_residual")
        if self.params.mode == "extended_step":
            mu = np.array([self.params.lambda_at(n, self.problem.beta) for n in range(len(l2))])
            return l2 / mu
        return l2

    @property
    def grad_gap_sq(self) -> Optional[np.ndarray]:
        """``||B x_n - B x*||^2`` per iteration, when a solution is known."""
        if self.problem.known_solution is None:
            return None
        return self.trace.column("grad_gap_sq")


def _schedule(problem: FBProblem, params: FBParams, strict: bool) -> OperatorSchedule:
    A, B, beta = problem.A, problem.B, problem.beta

    if params.mode == "overrelaxed":
        def build(n):
            U, g = params.metrics[n], params.gamma_at(n)
            return [resolvent_map(A, g, U), forward_map(B, g, U, strict=strict)]

        def phi_at(n):
            g, u = params.gamma_at(n), params.metrics[n].norm_ub
            return fb_phi(g, u, beta) if g * u < 4 * beta else np.inf

        lam_at = lambda n: params.lambda_at(n, beta)
    else:
        def build(n):
            U, g = params.metrics[n], params.gamma_at(n)
            mu = params.lambda_at(n, beta)
            phi = min(extended_phi(mu, g, U.norm_ub, beta), 1.0)

            def apply(x, U=U, g=g, mu=mu):
                p = resolvent_step(A, g, U, x - g * U.apply(B.apply(x)))
                return x + mu * (p - x)

            return [AveragedMap(problem.dim, apply, phi, U, name="relaxed-FB")]

        def phi_at(n):
            g, u = params.gamma_at(n), params.metrics[n].norm_ub
            return extended_phi(params.lambda_at(n, beta), g, u, beta)

        lam_at = 1.0

    if params.is_constant:
        cached = build(0)
        factors_at = lambda n: cached
        phi0 = phi_at(0)
        phi_rule = lambda n: phi0
    else:
        factors_at, phi_rule = build, phi_at

    errors_at = None
    if params.mode == "overrelaxed" and (params.a is not None or params.b is not None):
        def errors_at(i, n):
            if i == 1:
                return None if params.a is None else np.asarray(params.a(n), dtype=float)
            if params.b is None:
                return None
            U, g = params.metrics[n], params.gamma_at(n)
            return -g * U.apply(np.asarray(params.b(n), dtype=float))

    m = 2 if params.mode == "overrelaxed" else 1
    return OperatorSchedule(m, factors_at, lam_at, params.metrics, params.epsilon,
                            phi_at=phi_rule, errors_at=errors_at,
                            error_budget=params.error_budget, strong_window=True)


def _run(problem, params, x0, stop, strict, validate_horizon):
    stop = stop or StopRule()
    horizon = validate_horizon or (1 if params.is_constant else min(stop.max_iter, 1000))
    report = validate_fb_params(problem, params, horizon)
    if not report.passed and strict:
        raise ScheduleValidationError(report)
    schedule = _schedule(problem, params, strict)
    monitor = None
    ref = problem.known_solution
    if ref is not None:
        Bref = problem.B.apply(ref)

        def monitor(n, x):
            d = problem.B.apply(x) - Bref
            return {"grad_gap_sq": float(np.dot(d, d))}

    trace = iterate(schedule, x0, stop, reference=ref, monitor=monitor, strict=strict)
    trace.violations[:0] = [c.describe() for c in report.failures()]
    trace.meta["fb_validation"] = report.to_dict()
    trace.meta["mode"] = params.mode
    return FBResult(trace, trace.x_final, problem, params, report)


def solve_fb(problem: FBProblem, params: FBParams, x0, stop: Optional[StopRule] = None,
             strict: bool = True, validate_horizon: Optional[int] = None) -> FBResult:
    """Overrelaxed variable-metric forward-backward iteration.

    Parameters are validated first; in strict mode any violated window raises
    :class:`ScheduleValidationError` before the first step.
    """
    if params.mode != "overrelaxed":
        raise ValueError("solve_fb expects mode='overrelaxed'; use solve_fb_extended")
    return _run(problem, params, x0, stop, strict, validate_horizon)


def solve_fb_extended(problem: FBProblem, params: FBParams, x0, stop: Optional[StopRule] = None,
                      strict: bool = True, validate_horizon: Optional[int] = None) -> FBResult:
    """Underrelaxed forward-backward with large steps (single-factor schedule, lambda = 1)."""
    if params.mode != "extended_step":
        raise ValueError("solve_fb_extended expects mode='extended_step'")
    return _run(problem, params, x0, stop, strict, validate_horizon)


@dataclass
class ResidualReport:
    rho_sq: MonitorReport
    grad_gap: Optional[MonitorReport]

    @property
    def consistent(self) -> bool:
        return self.rho_sq.consistent and (self.grad_gap is None or self.grad_gap.consistent)

    def to_dict(self):
        return {"rho_sq": self.rho_sq.to_dict(),
                "grad_gap": None if self.grad_gap is None else self.grad_gap.to_dict()}


def fb_residuals(result: FBResult, window: int = 100, tol: float = 1e-10) -> ResidualReport:
    """Summability diagnostics for ``rho_n^2`` and ``||B x_n - B x*||^2``."""
    rho = result.rho
    g = result.grad_gap_sq
    return ResidualReport(summability_monitor(rho ** 2, window, tol),
                          None if g is None else summability_monitor(g, window, tol))
