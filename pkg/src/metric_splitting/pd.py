"""Variable-metric primal-dual splitting for composite monotone inclusions.

The problem is to find x with

    z in A x + sum_i L_i^* ((B_i [] D_i)(L_i x - r_i)) + C x

where ``B_i [] D_i`` is the parallel sum ``(B_i^{-1} + D_i^{-1})^{-1}``. The
iteration only evaluates ``J_{U A}``, ``J_{U_i B_i^{-1}}``, ``C``,
``D_i^{-1}``, ``L_i`` and ``L_i^*``.

It is a forward-backward iteration on the product space ``H x G_1 x ... x G_m``
in the metric

    V = [[U^{-1}, -L^*], [-L, diag(U_i^{-1})]]

and :class:`ProductSpace` exposes that form for cross-checking.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .driver import (WINDOW_RTOL, IterationRecord, IterationTrace, OperatorSchedule,
                     StopRule, _as_rule, summability_monitor)
from .exceptions import (AdjointError, DimensionError, NumericalError, ParameterWindowError,
                         ScheduleValidationError)
from .fb import fb_phi
from .metric import Metric, MetricSequence, sqrt, validate_sequence
from .operators import (CocoerciveOp, LinearMap, MonotoneOp, StronglyMonotoneOp,
                        AveragedMap, forward_map, inverse_resolvent_step, resolvent_step)
from .reports import ValidationReport

log = logging.getLogger(__name__)

ZETA_VARIANTS = ("delta_numerator", "as_printed")
ADJOINT_TOL = 1e-12


@dataclass
class DualBlock:
    """One term ``L^* ((B [] D)(L x - r))``; ``L`` maps H to G."""

    r: np.ndarray
    B: MonotoneOp
    D: StronglyMonotoneOp
    L: LinearMap

    @property
    def dim(self) -> int:
        return self.L.shape[0]


@dataclass
class CompositeProblem:
    """``z in A x + sum_i L_i^*((B_i [] D_i)(L_i x - r_i)) + C x``.

    ``known_solution`` is an optional primal-dual pair ``(x, [v_1, ...])``.
    The adjoint pairs are tested on construction.
    """

    z: np.ndarray
    A: MonotoneOp
    C: CocoerciveOp
    blocks: List[DualBlock]
    known_solution: Optional[tuple] = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        n = self.A.dim
        if self.z.shape != (n,) or self.C.dim != n:
            raise DimensionError("z, A and C must act on the same space")
        if not self.blocks:
            raise ValueError("at least one dual block is required")
        for i, blk in enumerate(self.blocks, start=1):
            blk.r = np.asarray(blk.r, dtype=float)
            k, nn = blk.L.shape
            if nn != n or blk.r.shape != (k,) or blk.B.dim != k or blk.D.dim != k:
                raise DimensionError(f"block {i}: dimensions of L, r, B, D disagree")
            gap = blk.L.adjoint_mismatch()
            if not gap <= ADJOINT_TOL:
                raise AdjointError(f"block {i}: <Lx, v> and <x, L*v> differ by {gap:.3e}")
            if blk.L.norm() == 0.0:
                raise ValueError(f"block {i}: L must be nonzero")
        if self.known_solution is not None:
            x, v = self.known_solution
            self.known_solution = (np.asarray(x, dtype=float),
                                   [np.asarray(vi, dtype=float) for vi in v])

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def dim(self) -> int:
        return self.A.dim

    @property
    def dual_dims(self) -> List[int]:
        return [b.dim for b in self.blocks]

    @property
    def beta(self) -> float:
        """``min{mu_C, nu_1, ..., nu_m}``."""
        return min([self.C.beta] + [b.D.nu for b in self.blocks])

    def adjoint_sum(self, v) -> np.ndarray:
        """``sum_i L_i^* v_i``, reduced in block order."""
        out = np.zeros(self.dim)
        for blk, vi in zip(self.blocks, v):
            out = out + blk.L.rmatvec(vi)
        return out


# ------------------------------------------------------------- parameters

def compute_delta(U: Metric, duals: Sequence[Metric], Ls: Sequence[LinearMap]) -> float:
    """``1 / sqrt(sum_i ||sqrt(U_i) L_i sqrt(U)||^2) - 1`` with spectral norms."""
    if len(duals) != len(Ls):
        raise DimensionError("one dual metric per linear map is required")
    sU = sqrt(U).matrix
    total = 0.0
    for Ui, L in zip(duals, Ls):
        if Ui.dim != L.shape[0] or U.dim != L.shape[1]:
            raise DimensionError(f"metric sizes do not match a {L.shape} linear map")
        M = sqrt(Ui).matrix @ L.dense() @ sU
        total += float(np.linalg.norm(M, 2)) ** 2
    if total == 0.0:
        raise ZeroDivisionError("all linear maps are zero")
    return float(1.0 / np.sqrt(total) - 1.0)


def compute_zeta(delta: float, norms: Sequence[float], variant: str = "delta_numerator") -> float:
    """Lower bound on the product metric.

    ``delta_numerator``: ``delta / ((1 + delta) max norms)``.
    ``as_printed``: ``(1 + delta) / ((1 + delta) max norms) = 1 / max norms``.
    """
    if variant not in ZETA_VARIANTS:
        raise ValueError(f"zeta_variant must be one of {ZETA_VARIANTS}, got {variant!r}")
    if not delta > -1.0:
        raise ParameterWindowError("delta nonpositive", f"delta={delta!r} must exceed -1")
    top = max(float(t) for t in norms)
    if not top > 0:
        raise ValueError("metric norms must be positive")
    if variant == "delta_numerator":
        if not delta > 0:
            raise ParameterWindowError("delta nonpositive", f"delta={delta!r}")
        return delta / ((1.0 + delta) * top)
    return (1.0 + delta) / ((1.0 + delta) * top)


def pd_lambda_window(zeta, beta, epsilon):
    return float(epsilon), float(1.0 + (1.0 - epsilon) * (1.0 - 1.0 / (2.0 * zeta * beta)))


def _as_block_rule(value):
    if value is None:
        return None
    if callable(value):
        return value
    raise TypeError("dual error sequences must be callables (i, n) -> vector")


@dataclass
class PDParams:
    """Metrics, relaxation and error sequences of the primal-dual iteration.

    ``lam`` is ``"midpoint"`` (middle of the relaxation window), a constant,
    a list (last value repeats) or a rule ``n -> value``. Errors ``a``, ``c``
    are rules ``n -> vector`` in H; ``b``, ``d`` are rules ``(i, n) -> vector``
    in ``G_i`` with i starting at 1.
    """

    primal_metrics: MetricSequence
    dual_metrics: list
    epsilon: float = 1e-2
    lam: object = "midpoint"
    a: Optional[Callable] = None
    c: Optional[Callable] = None
    b: Optional[Callable] = None
    d: Optional[Callable] = None
    zeta_variant: str = "delta_numerator"

    def __post_init__(self):
        if isinstance(self.primal_metrics, Metric):
            self.primal_metrics = MetricSequence.constant(self.primal_metrics)
        self.dual_metrics = [MetricSequence.constant(s) if isinstance(s, Metric) else s
                             for s in self.dual_metrics]
        if self.zeta_variant not in ZETA_VARIANTS:
            raise ValueError(f"zeta_variant must be one of {ZETA_VARIANTS}")
        if isinstance(self.lam, str):
            if self.lam != "midpoint":
                raise ValueError(f"unknown relaxation policy {self.lam!r}")
            self._lam = None
        else:
            self._lam = _as_rule(self.lam)
        self.b = _as_block_rule(self.b)
        self.d = _as_block_rule(self.d)

    @property
    def is_constant(self) -> bool:
        return (self.primal_metrics.is_constant
                and all(s.is_constant for s in self.dual_metrics)
                and (self._lam is None or not (callable(self.lam)
                                               or isinstance(self.lam, (list, tuple, np.ndarray)))))

    def metrics_at(self, n):
        return self.primal_metrics[n], [s[n] for s in self.dual_metrics]


def pd_parameters(problem: CompositeProblem, params: PDParams, n: int = 0) -> dict:
    """delta_n, zeta_n, the relaxation window and lambda_n at iteration n.

    Raises :class:`ParameterWindowError` when delta_n or zeta_n is undefined.
    """
    U, Us = params.metrics_at(n)
    delta = compute_delta(U, Us, [b.L for b in problem.blocks])
    zeta = compute_zeta(delta, [U.norm_ub] + [V.norm_ub for V in Us], params.zeta_variant)
    beta, eps = problem.beta, params.epsilon
    lo, hi = pd_lambda_window(zeta, beta, eps)
    lam = 0.5 * (lo + hi) if params._lam is None else float(params._lam(n))
    phi = fb_phi(1.0, 1.0 / zeta, beta) if 1.0 / zeta < 4.0 * beta else np.inf
    return {"delta": delta, "zeta": zeta, "lambda_lo": lo, "lambda_hi": hi,
            "lambda": lam, "phi": phi}


def validate_pd_params(problem: CompositeProblem, params: PDParams,
                       horizon: int = 1) -> ValidationReport:
    """Check the epsilon, delta, zeta and relaxation windows for ``n < horizon``
    and that every metric sequence is non-decreasing in the Loewner order."""
    report = ValidationReport()
    beta, eps = problem.beta, params.epsilon
    if len(params.dual_metrics) != problem.m:
        raise DimensionError(f"{len(params.dual_metrics)} dual metric sequences for {problem.m} blocks")
    top = min(1.0, beta)
    report.add("epsilon window ]0, min{1, beta}[", 0 < eps < top, None,
               f"epsilon={eps!r}, min{{1, beta}}={top!r}")
    horizon = max(int(horizon), 1)
    first = {}
    values = []
    for n in range(horizon):
        U, Us = params.metrics_at(n)
        delta = compute_delta(U, Us, [b.L for b in problem.blocks])
        row = {"n": n, "delta": delta}
        values.append(row)
        if params.zeta_variant == "delta_numerator" and not delta > 0:
            first.setdefault("delta positive", (n, f"delta nonpositive: delta={delta!r}"))
            continue
        if not delta > -1:
            first.setdefault("delta positive", (n, f"delta nonpositive: delta={delta!r}"))
            continue
        if not delta > 0:
            # only the as-printed formula tolerates this; flag it all the same
            first.setdefault("delta positive", (n, f"delta nonpositive: delta={delta!r}"))
        zeta = compute_zeta(delta, [U.norm_ub] + [V.norm_ub for V in Us], params.zeta_variant)
        row["zeta"] = zeta
        zmin = 1.0 / (2.0 * beta - eps) if 2.0 * beta > eps else np.inf
        if not zeta >= zmin * (1.0 - WINDOW_RTOL):
            first.setdefault("zeta window", (n, f"zeta={zeta!r} < 1/(2 beta - epsilon)={zmin!r}"))
        lo, hi = pd_lambda_window(zeta, beta, eps)
        lam = 0.5 * (lo + hi) if params._lam is None else float(params._lam(n))
        row["lambda"] = lam
        if not (lam >= lo * (1.0 - WINDOW_RTOL) and lam <= hi * (1.0 + WINDOW_RTOL)):
            first.setdefault("lambda window", (n, f"lambda={lam!r} not in [{lo!r}, {hi!r}]"))
    for name in ("delta positive", "zeta window", "lambda window"):
        bad = first.get(name)
        report.add(name, bad is None, None if bad is None else bad[0],
                   "" if bad is None else bad[1])
    report.extend(validate_sequence(params.primal_metrics, horizon=horizon + 1,
                                    non_decreasing=True), prefix="primal ")
    for i, seq in enumerate(params.dual_metrics, start=1):
        report.extend(validate_sequence(seq, horizon=horizon + 1, non_decreasing=True),
                      prefix=f"dual {i} ")
    report.data["parameters"] = values
    report.data["zeta_variant"] = params.zeta_variant
    report.assumed.append("the inclusion has a primal-dual solution")
    return report


# --------------------------------------------------------------- the loop

def _v_quad(problem, U, Us, dx, dv) -> float:
    """``||(dx, dv)||_V^2`` for the product metric V."""
    s = U.inv_quad(dx)
    for blk, Ui, w in zip(problem.blocks, Us, dv):
        s += Ui.inv_quad(w) - 2.0 * float(np.dot(blk.L.matvec(dx), w))
    return s


def pd_step(problem: CompositeProblem, U: Metric, Us: Sequence[Metric], x, v,
            a=None, c=None, b=None, d=None):
    """One unrelaxed pass: returns ``(p, [q_i])`` for the current ``(x, v)``.

    ``b`` and ``d`` are lists (one vector or None per block).
    """
    g = problem.adjoint_sum(v) + problem.C.apply(x) - problem.z
    if c is not None:
        g = g + c
    p = resolvent_step(problem.A, 1.0, U, x - U.apply(g))
    if a is not None:
        p = p + a
    y = 2.0 * p - x
    q = []
    for i, (blk, Ui, vi) in enumerate(zip(problem.blocks, Us, v)):
        h = blk.L.matvec(y) - blk.D.inverse_apply(vi) - blk.r
        if d is not None and d[i] is not None:
            h = h - d[i]
        qi = inverse_resolvent_step(blk.B, 1.0, Ui, vi + Ui.apply(h))
        if b is not None and b[i] is not None:
            qi = qi + b[i]
        q.append(qi)
    return p, q


@dataclass
class KKTReport:
    primal: float
    dual: List[float]

    @property
    def worst(self) -> float:
        return max([self.primal] + list(self.dual))

    def to_dict(self):
        return {"primal": self.primal, "dual": list(self.dual)}


def pd_residuals(problem: CompositeProblem, x, v) -> KKTReport:
    """Resolvent residuals of the primal and dual optimality conditions.

    primal: ``||J_A(x + z - sum L_i^* v_i - Cx) - x||``
    dual i: ``||J_{B_i^{-1}}(v_i + L_i x - r_i - D_i^{-1} v_i) - v_i||``

    Both vanish exactly at a primal-dual solution.
    """
    x = np.asarray(x, dtype=float)
    v = [np.asarray(vi, dtype=float) for vi in v]
    if x.shape != (problem.dim,) or len(v) != problem.m:
        raise DimensionError("primal or dual point has the wrong shape")
    Id = Metric.identity(problem.dim)
    w = x + problem.z - problem.adjoint_sum(v) - problem.C.apply(x)
    primal = float(np.linalg.norm(resolvent_step(problem.A, 1.0, Id, w) - x))
    dual = []
    for blk, vi in zip(problem.blocks, v):
        Ii = Metric.identity(blk.dim)
        wi = vi + blk.L.matvec(x) - blk.r - blk.D.inverse_apply(vi)
        dual.append(float(np.linalg.norm(inverse_resolvent_step(blk.B, 1.0, Ii, wi) - vi)))
    return KKTReport(primal, dual)


@dataclass
class PDResult:
    trace: IterationTrace
    x_final: np.ndarray
    v_final: List[np.ndarray]
    problem: CompositeProblem
    params: PDParams
    report: ValidationReport = field(default_factory=ValidationReport)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def residuals(self) -> KKTReport:
        return pd_residuals(self.problem, self.x_final, self.v_final)

    def split(self, xt):
        """Split a stacked product-space vector into ``(x, [v_i])``."""
        return split_product(self.problem, xt)


def split_product(problem: CompositeProblem, xt):
    xt = np.asarray(xt, dtype=float)
    n = problem.dim
    x, v, k = xt[:n], [], n
    for g in problem.dual_dims:
        v.append(xt[k:k + g])
        k += g
    return x, v


def stack_product(x, v) -> np.ndarray:
    return np.concatenate([np.asarray(x, dtype=float)] + [np.asarray(vi, dtype=float) for vi in v])


def _errors(params, n, m):
    a = None if params.a is None else np.asarray(params.a(n), dtype=float)
    c = None if params.c is None else np.asarray(params.c(n), dtype=float)
    b = None if params.b is None else [np.asarray(params.b(i, n), dtype=float)
                                       for i in range(1, m + 1)]
    d = None if params.d is None else [np.asarray(params.d(i, n), dtype=float)
                                       for i in range(1, m + 1)]
    return a, c, b, d


def solve_pd(problem: CompositeProblem, params: PDParams, x0, v0=None,
             stop: Optional[StopRule] = None, strict: bool = True,
             validate_horizon: Optional[int] = None) -> PDResult:
    """Run the primal-dual iteration.

    Each step computes

    .. code-block:: text

        p   = J_{U A}(x - U(sum L_i^* v_i + C x + c - z)) + a
        y   = 2 p - x
        x+  = x + lam (p - x)
        q_i = J_{U_i B_i^{-1}}(v_i + U_i(L_i y - D_i^{-1} v_i - d_i - r_i)) + b_i
        v_i+ = v_i + lam (q_i - v_i)

    The trace stores stacked vectors ``(x, v_1, ..., v_m)``; ``residual_u`` is
    measured in the product metric V_n and ``phi`` is the averagedness
    constant ``2 beta / (4 beta - 1/zeta_n)`` of the product-space map.
    The stop rule's residual test applies to ``residual_u``.
    """
    stop = stop or StopRule()
    m = problem.m
    x = np.array(x0, dtype=float)
    v = [np.zeros(g) for g in problem.dual_dims] if v0 is None \
        else [np.array(vi, dtype=float) for vi in v0]
    if x.shape != (problem.dim,) or [vi.shape for vi in v] != [(g,) for g in problem.dual_dims]:
        raise DimensionError("x0 or v0 has the wrong shape")
    horizon = validate_horizon or (1 if params.is_constant else min(stop.max_iter, 1000))
    report = validate_pd_params(problem, params, horizon)
    trace = IterationTrace()
    trace.meta["validation"] = report.to_dict()
    if not report.passed:
        if strict:
            raise ScheduleValidationError(report)
        trace.violations.extend(c.describe() for c in report.failures())

    ref = problem.known_solution
    threshold = stop.tol * (1.0 + float(np.linalg.norm(stack_product(x, v))))
    cached = None
    trace.stop_reason = "max_iter"
    for n in range(stop.max_iter):
        t0 = time.perf_counter()
        U, Us = params.metrics_at(n)
        if cached is None or not params.is_constant:
            cached = pd_parameters(problem, params, n)
        pars = cached
        lam, phi = pars["lambda"], pars["phi"]
        if not params.is_constant and n > 0:
            # per-step window check; constant runs were fully validated above
            lo, hi = pars["lambda_lo"], pars["lambda_hi"]
            if not lo * (1 - WINDOW_RTOL) <= lam <= hi * (1 + WINDOW_RTOL):
                exc = ParameterWindowError("lambda window", f"lambda={lam!r} not in [{lo!r}, {hi!r}]", n)
                if strict:
                    raise exc
                if not any(s.startswith("lambda window") for s in trace.violations):
                    trace.violations.append(str(exc))

        a, c, b, d = _errors(params, n, m)
        p, q = pd_step(problem, U, Us, x, v, a, c, b, d)
        if not (np.all(np.isfinite(p)) and all(np.all(np.isfinite(qi)) for qi in q)):
            raise NumericalError(n)
        dx = p - x
        dv = [qi - vi for qi, vi in zip(q, v)]
        r = float(np.sqrt(max(_v_quad(problem, U, Us, dx, dv), 0.0)))
        s = lam * (1.0 / phi - lam) * r * r
        l2 = float(np.linalg.norm(stack_product(dx, dv)))
        rec = IterationRecord(n, stack_product(x, v), stack_product(p, q), lam, phi, r, s, l2, 0.0)
        kkt = pd_residuals(problem, x, v)
        rec.extra = {"primal_residual": kkt.primal}
        for i, t in enumerate(kkt.dual, start=1):
            rec.extra[f"dual_residual_{i}"] = t
        if ref is not None:
            rec.dist_sq = _v_quad(problem, U, Us, x - ref[0], [vi - wi for vi, wi in zip(v, ref[1])])
        trace.append(rec)
        if r <= threshold:
            trace.stop_reason = "residual"
            rec.wallclock_us = (time.perf_counter() - t0) * 1e6
            break
        x = x + lam * dx
        v = [vi + lam * w for vi, w in zip(v, dv)]
        rec.wallclock_us = (time.perf_counter() - t0) * 1e6

    if ref is not None and trace.records and trace.stop_reason == "max_iter":
        U, Us = params.metrics_at(len(trace))
        trace.meta["final_dist_sq"] = _v_quad(problem, U, Us, x - ref[0],
                                              [vi - wi for vi, wi in zip(v, ref[1])])
    elif trace.records:
        trace.meta["final_dist_sq"] = trace.records[-1].dist_sq
    trace.x_final = stack_product(x, v)
    trace.meta.update(iterations=len(trace), stop_reason=trace.stop_reason, stop=stop.to_json(),
                      zeta_variant=params.zeta_variant,
                      parameters_0=pd_parameters(problem, params, 0))
    log.debug("solve_pd: %d iterations, stop=%s", len(trace), trace.stop_reason)
    return PDResult(trace, x, v, problem, params, report)


def pd_monitor(result: PDResult, window: int = 100, tol: float = 1e-10) -> dict:
    """Summability flags for the primal and per-block dual residuals along the trace."""
    out = {"primal": summability_monitor(result.trace.column("primal_residual") ** 2, window, tol)}
    for i in range(1, result.problem.m + 1):
        col = result.trace.column(f"dual_residual_{i}")
        out[f"dual_{i}"] = summability_monitor(col ** 2, window, tol)
    return out


# --------------------------------------------------------- product space

class ProductSpace:
    """Product-space view of one primal-dual step in fixed metrics.

    Parameters
    ----------
    problem : CompositeProblem
    U : Metric
        Primal metric.
    Us : list of Metric
        Dual metrics, one per block.
    """

    def __init__(self, problem: CompositeProblem, U: Metric, Us: Sequence[Metric]):
        self.problem = problem
        self.U = U
        self.Us = list(Us)
        self.dim = problem.dim + sum(problem.dual_dims)

    def v_tilde(self) -> np.ndarray:
        """Dense ``V = [[U^{-1}, -L^*], [-L, diag(U_i^{-1})]]``."""
        n = self.problem.dim
        V = np.zeros((self.dim, self.dim))
        V[:n, :n] = np.linalg.inv(self.U.matrix)
        k = n
        for blk, Ui in zip(self.problem.blocks, self.Us):
            g = blk.dim
            Ld = blk.L.dense()
            V[k:k + g, k:k + g] = np.linalg.inv(Ui.matrix)
            V[k:k + g, :n] = -Ld
            V[:n, k:k + g] = -Ld.T
            k += g
        return 0.5 * (V + V.T)

    def b_tilde(self, xt) -> np.ndarray:
        """``(C x, D_1^{-1} v_1, ...)``."""
        x, v = split_product(self.problem, xt)
        return stack_product(self.problem.C.apply(x),
                             [blk.D.inverse_apply(vi) for blk, vi in zip(self.problem.blocks, v)])

    def resolvent(self, wt) -> np.ndarray:
        """``J_{V^{-1} A~}(w)`` by block elimination.

        ``A~(x, v) = (-z + A x + sum L_i^* v_i, r_i - L_i x + B_i^{-1} v_i)``.
        """
        wx, wv = split_product(self.problem, wt)
        P = self.problem
        p = resolvent_step(P.A, 1.0, self.U, wx - self.U.apply(P.adjoint_sum(wv) - P.z))
        q = []
        for blk, Ui, wi in zip(P.blocks, self.Us, wv):
            h = blk.L.matvec(2.0 * p - wx) - blk.r
            q.append(inverse_resolvent_step(blk.B, 1.0, Ui, wi + Ui.apply(h)))
        return stack_product(p, q)

    def step(self, xt) -> np.ndarray:
        """``J_{V^{-1} A~}(x - V^{-1} B~ x)`` with a dense solve for ``V^{-1}``."""
        xt = np.asarray(xt, dtype=float)
        return self.resolvent(xt - np.linalg.solve(self.v_tilde(), self.b_tilde(xt)))

    def membership_gaps(self, xt, yt) -> dict:
        """Check that ``yt = (p, q)`` solves the resolvent inclusion at ``xt``.

        With ``u_A = U^{-1}(x - p) - sum L_i^* v_i - C x + z`` and
        ``u_i = U_i^{-1}(v_i - q_i) + L_i(2p - x) - D_i^{-1} v_i - r_i`` the
        inclusion holds iff ``u_A in A p`` and ``u_i in B_i^{-1} q_i``, tested
        as ``p = J_A(p + u_A)`` and ``q_i = J_{B_i^{-1}}(q_i + u_i)``.
        """
        P = self.problem
        x, v = split_product(P, xt)
        p, q = split_product(P, yt)
        Id = Metric.identity(P.dim)
        uA = self.U.solve(x - p) - P.adjoint_sum(v) - P.C.apply(x) + P.z
        gaps = {"A": float(np.linalg.norm(resolvent_step(P.A, 1.0, Id, p + uA) - p))}
        for i, (blk, Ui, vi, qi) in enumerate(zip(P.blocks, self.Us, v, q), start=1):
            ui = (Ui.solve(vi - qi) + blk.L.matvec(2.0 * p - x)
                  - blk.D.inverse_apply(vi) - blk.r)
            Ii = Metric.identity(blk.dim)
            gaps[f"B{i}"] = float(np.linalg.norm(
                inverse_resolvent_step(blk.B, 1.0, Ii, qi + ui) - qi))
        return gaps

    def schedule(self, epsilon: float, lam, zeta: float) -> OperatorSchedule:
        """Driver schedule ``[J_{V^{-1} A~}, Id - V^{-1} B~]`` in the metric ``V^{-1}``."""
        Vinv = np.linalg.inv(self.v_tilde())
        W = Metric.from_matrix(0.5 * (Vinv + Vinv.T))
        Bt = CocoerciveOp(self.dim, self.b_tilde, self.problem.beta, name="B~")
        J = AveragedMap(self.dim, self.resolvent, 0.5, W, name="J[A~]")
        F = forward_map(Bt, 1.0, W)
        phi = fb_phi(1.0, 1.0 / zeta, self.problem.beta)
        return OperatorSchedule(2, lambda n: [J, F], lam, MetricSequence.constant(W), epsilon,
                                phi_at=lambda n: phi, strong_window=True)
