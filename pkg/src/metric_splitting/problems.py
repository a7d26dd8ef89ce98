"""Concrete operators and seeded problem instances with reference solutions.

Resolvents are closed-form and exact in the metrics they support (diagonal
or scalar). Reference solutions come from deliberately plain solvers that do
not share code with the splitting algorithms: cyclic coordinate descent for
the lasso and projected gradient for the smoothed fused-signal problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

import numpy as np

from .driver import OperatorSchedule
from .exceptions import OracleError, UnknownProblemError, UnsupportedMetricError
from .fb import FBProblem
from .metric import Metric, MetricSequence
from .operators import (CocoerciveOp, LinearMap, MonotoneOp, StronglyMonotoneOp,
                        compose_constants, resolvent_map)
from .pd import CompositeProblem, DualBlock

CERTIFICATE_TOL = 1e-10


def _require_diagonal(U: Metric, what: str):
    if not U.is_diagonal:
        raise UnsupportedMetricError(f"{what}: closed form needs a diagonal metric")
    return U.diag


def _require_scalar(U: Metric, what: str):
    if not U.is_scalar:
        raise UnsupportedMetricError(f"{what}: closed form needs a scalar metric c*Id")


# ---------------------------------------------------------------- operators

def soft_threshold(x, level):
    return np.sign(x) * np.maximum(np.abs(x) - level, 0.0)


def make_prox_l1(tau: float, dim: int) -> MonotoneOp:
    """Subdifferential of ``tau ||x||_1`` on R^dim.

    ``J_{gamma U A}`` is a soft threshold at ``gamma U_kk tau`` for diagonal
    U. The inverse operator is the normal cone of ``[-tau, tau]^dim``, whose
    resolvent is a clamp.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    tau = float(tau)

    def resolvent(gamma, U, x):
        d = _require_diagonal(U, "l1 prox")
        return soft_threshold(np.asarray(x, dtype=float), gamma * d * tau)

    def membership(x, u, tol=1e-10):
        x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
        on = x != 0
        ok_on = np.all(np.abs(u[on] - tau * np.sign(x[on])) <= tol)
        ok_off = np.all(np.abs(u[~on]) <= tau + tol)
        return bool(ok_on and ok_off)

    def inverse_resolvent(gamma, U, v):
        _require_diagonal(U, "l1 dual prox")
        return np.clip(np.asarray(v, dtype=float), -tau, tau)

    return MonotoneOp(dim, resolvent, membership, inverse_resolvent, name=f"l1(tau={tau:g})")


def make_projection(kind: str, **params) -> MonotoneOp:
    """Normal cone of a closed convex set; its resolvents are projections.

    ``kind`` is ``"box"`` (``lo``, ``hi``), ``"halfspace"`` (``a``, ``b``:
    the set ``<a, x> <= b``) or ``"l2_ball"`` (``c``, ``r``). The box
    supports any diagonal metric; halfspaces and balls need ``U = c Id``.

    >>> A = make_projection("box", lo=[0, 0], hi=[1, 1])
    >>> A.resolvent(1.0, Metric.identity(2), np.array([2.0, -1.0]))
    array([1., 0.])
    """
    if kind == "box":
        lo = np.asarray(params["lo"], dtype=float)
        hi = np.asarray(params["hi"], dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("box needs lo <= hi with matching shapes")
        dim = lo.size

        def project(gamma, U, x):
            _require_diagonal(U, "box projection")
            return np.clip(x, lo, hi)

        def membership(x, u, tol=1e-10):
            x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
            if np.any(x < lo - tol) or np.any(x > hi + tol):
                return False
            at_hi = np.abs(x - hi) <= tol
            at_lo = np.abs(x - lo) <= tol
            ok = np.where(u > tol, at_hi, True) & np.where(u < -tol, at_lo, True)
            return bool(np.all(ok))

        name = "box"
    elif kind == "halfspace":
        a = np.asarray(params["a"], dtype=float)
        b = float(params["b"])
        na = float(np.dot(a, a))
        if na == 0.0:
            raise ValueError("halfspace normal must be nonzero")
        dim = a.size

        def project(gamma, U, x):
            _require_scalar(U, "halfspace projection")
            t = float(np.dot(a, x)) - b
            return x - (max(t, 0.0) / na) * a

        def membership(x, u, tol=1e-10):
            x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
            t = float(np.dot(a, x)) - b
            if t > tol:
                return False
            if np.linalg.norm(u) <= tol:
                return True
            if t < -tol:
                return False
            s = float(np.dot(u, a)) / na
            return bool(s >= -tol and np.linalg.norm(u - s * a) <= tol * max(1.0, abs(s)))

        name = "halfspace"
    elif kind == "l2_ball":
        c = np.asarray(params["c"], dtype=float)
        r = float(params["r"])
        if not r > 0:
            raise ValueError("ball radius must be positive")
        dim = c.size

        def project(gamma, U, x):
            _require_scalar(U, "ball projection")
            d = x - c
            nd = float(np.linalg.norm(d))
            return x.copy() if nd <= r else c + (r / nd) * d

        def membership(x, u, tol=1e-10):
            x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
            d = x - c
            nd = float(np.linalg.norm(d))
            if nd > r + tol:
                return False
            if np.linalg.norm(u) <= tol:
                return True
            if nd < r - tol:
                return False
            s = float(np.dot(u, d)) / (nd * nd)
            return bool(s >= -tol and np.linalg.norm(u - s * d) <= tol * max(1.0, abs(s)))

        name = "l2_ball"
    else:
        raise ValueError(f"unknown set kind {kind!r}; expected box, halfspace or l2_ball")

    def resolvent(gamma, U, x):
        return project(gamma, U, np.asarray(x, dtype=float))

    return MonotoneOp(dim, resolvent, membership, None, name=name)


def make_quadratic_gradient(M, b) -> CocoerciveOp:
    """Gradient ``x -> M^T (M x - b)`` of ``0.5 ||M x - b||^2``, cocoercive with
    ``beta = 1 / lambda_max(M^T M)``."""
    M = np.array(M, dtype=float)
    b = np.array(b, dtype=float)
    if M.ndim != 2 or b.shape != (M.shape[0],):
        raise ValueError("M must be a matrix and b a vector with one entry per row")
    top = float(np.linalg.eigvalsh(M.T @ M)[-1])
    if not top > 0:
        raise ValueError("M must be nonzero")
    M.setflags(write=False)
    b.setflags(write=False)
    return CocoerciveOp(M.shape[1], lambda x: M.T @ (M @ x - b), 1.0 / top, name="quadratic")


def first_difference(n: int) -> LinearMap:
    """``(L x)_j = x_{j+1} - x_j`` from R^n to R^{n-1}, with explicit adjoint."""
    if n < 2:
        raise ValueError("first difference needs n >= 2")

    def matvec(x):
        return np.diff(np.asarray(x, dtype=float))

    def rmatvec(v):
        v = np.asarray(v, dtype=float)
        out = np.zeros(n)
        out[:-1] -= v
        out[1:] += v
        return out

    return LinearMap((n - 1, n), matvec, rmatvec, name="diff")


def jacobi_metric(M) -> Metric:
    """Diagonal preconditioner ``U_kk ~ 1 / sum_j |(M^T M)_kj|`` scaled to ``||U|| = 1``."""
    M = np.asarray(M, dtype=float)
    rows = np.abs(M.T @ M).sum(axis=1)
    if np.any(rows == 0):
        raise ValueError("M has a zero column")
    return Metric.diagonal(rows.min() / rows)


# ---------------------------------------------------------------- instances

@dataclass
class ProblemInstance:
    """A seeded instance with its reference solution and certificate.

    ``problem`` is an :class:`FBProblem`, a :class:`CompositeProblem` or, for
    plain projection problems, a list of normal-cone operators.
    """

    name: str
    seed: Optional[int]
    dims: Dict[str, int]
    problem: Any
    solution: Any
    certificate: float
    params: Dict[str, Any] = field(default_factory=dict)
    data: Dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"name": self.name, "seed": self.seed, "dims": dict(self.dims),
                "params": dict(self.params), "certificate": self.certificate}


def lasso_certificate(M, b, tau, x) -> float:
    """Largest violation of the lasso optimality conditions at x."""
    g = M.T @ (M @ x - b)
    on = x != 0
    viol = np.zeros_like(x)
    viol[on] = np.abs(g[on] + tau * np.sign(x[on]))
    viol[~on] = np.maximum(np.abs(g[~on]) - tau, 0.0)
    return float(viol.max(initial=0.0))


def lasso_coordinate_descent(M, b, tau, tol=1e-12, max_sweeps=1_000_000):
    """Cyclic coordinate descent for ``0.5 ||M x - b||^2 + tau ||x||_1``."""
    n = M.shape[1]
    col_sq = np.einsum("ij,ij->j", M, M)
    x = np.zeros(n)
    resid = M @ x - b
    for sweep in range(max_sweeps):
        biggest = 0.0
        for k in range(n):
            if col_sq[k] == 0.0:
                continue
            g = float(M[:, k] @ resid)
            new = float(soft_threshold(x[k] - g / col_sq[k], tau / col_sq[k]))
            step = new - x[k]
            if step != 0.0:
                resid += step * M[:, k]
                x[k] = new
                biggest = max(biggest, abs(step))
        if sweep % 10 == 9 or biggest == 0.0:
            resid = M @ x - b
            if lasso_certificate(M, b, tau, x) <= tol:
                break
    return x


def lasso_ista(M, b, tau, max_iter=1_000_000, tol=1e-13):
    """Proximal gradient with step ``1/lambda_max(M^T M)``; an independent
    second reference used only for cross-checks."""
    step = 1.0 / float(np.linalg.eigvalsh(M.T @ M)[-1])
    x = np.zeros(M.shape[1])
    for _ in range(max_iter):
        nxt = soft_threshold(x - step * (M.T @ (M @ x - b)), step * tau)
        if np.max(np.abs(nxt - x)) <= tol:
            return nxt
        x = nxt
    return x


def make_lasso(seed: int = 42, m_rows: int = 5, n_cols: int = 20, tau: Optional[float] = None,
               tau_ratio: float = 0.1) -> ProblemInstance:
    """``min 0.5 ||M x - b||^2 + tau ||x||_1`` with Gaussian M and b.

    When ``tau`` is omitted it is ``tau_ratio * ||M^T b||_inf``. The
    reference solution comes from coordinate descent and must certify to
    1e-10.
    """
    if n_cols > 50 or m_rows < 1 or n_cols < 1:
        raise ValueError("lasso instances are limited to 1 <= n_cols <= 50")
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((m_rows, n_cols))
    b = rng.standard_normal(m_rows)
    if tau is None:
        tau = tau_ratio * float(np.max(np.abs(M.T @ b)))
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    x = lasso_coordinate_descent(M, b, tau)
    cert = lasso_certificate(M, b, tau, x)
    if not cert <= CERTIFICATE_TOL:
        raise OracleError(f"coordinate descent certificate {cert:.3e} exceeds {CERTIFICATE_TOL}")
    problem = FBProblem(make_prox_l1(tau, n_cols), make_quadratic_gradient(M, b), x)
    return ProblemInstance("lasso", seed, {"m_rows": m_rows, "n_cols": n_cols}, problem, x, cert,
                           params={"tau": float(tau), "tau_ratio": tau_ratio},
                           data={"M": M, "b": b})


def huber_grad(t, nu, tau):
    """Gradient of the Moreau envelope of ``tau |.|`` with parameter ``1/nu``."""
    return np.clip(nu * t, -tau, tau)


def fused_certificate(x, obs, nu, tau) -> float:
    L = first_difference(x.size)
    grad = (x - obs) + L.rmatvec(huber_grad(L.matvec(x), nu, tau))
    return float(np.linalg.norm(x - np.clip(x - grad, 0.0, 1.0)))


def fused_projected_gradient(obs, nu, tau, tol=1e-13, max_iter=1_000_000):
    """Projected gradient on the smoothed fused objective, step ``1/(1 + 4 nu)``."""
    n = obs.size
    L = first_difference(n)
    step = 1.0 / (1.0 + 4.0 * nu)
    x = np.clip(obs, 0.0, 1.0)
    for _ in range(max_iter):
        grad = (x - obs) + L.rmatvec(huber_grad(L.matvec(x), nu, tau))
        nxt = np.clip(x - step * grad, 0.0, 1.0)
        if np.linalg.norm(nxt - x) <= step * tol:
            return nxt
        x = nxt
    return x


def make_fused_toy(seed: int = 7, n: int = 12, tau: float = 0.5, smoothing_nu: float = 10.0,
                   obs=None) -> ProblemInstance:
    """Box-constrained denoising with a smoothed total-variation term.

    H = R^n, ``A = N_{[0,1]^n}``, ``C x = x - obs``, one dual block with
    the first-difference map, ``B = d(tau |.|_1)`` and ``D = nu Id`` so that
    ``B [] D`` is the gradient of the Huber function ``clip(nu t, -tau, tau)``.

    The default ``obs`` is a noisy piecewise-constant signal that leaves
    the box in places.
    """
    if not 2 <= n <= 30:
        raise ValueError("fused toy needs 2 <= n <= 30")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    if not smoothing_nu > 0:
        raise ValueError("smoothing_nu must be positive")
    rng = np.random.default_rng(seed)
    if obs is None:
        levels = np.array([0.1, 0.9, 0.4, 1.0])
        signal = np.repeat(levels, -(-n // levels.size))[:n]
        obs = signal + 0.3 * rng.standard_normal(n)
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (n,):
        raise ValueError(f"obs must have length {n}")
    nu = float(smoothing_nu)

    x = fused_projected_gradient(obs, nu, tau)
    cert = fused_certificate(x, obs, nu, tau)
    if not cert <= CERTIFICATE_TOL:
        raise OracleError(f"projected gradient certificate {cert:.3e} exceeds {CERTIFICATE_TOL}")
    L = first_difference(n)
    v = huber_grad(L.matvec(x), nu, tau)

    A = make_projection("box", lo=np.zeros(n), hi=np.ones(n))
    C = CocoerciveOp(n, lambda y: y - obs, 1.0, name="residual")
    D = StronglyMonotoneOp(n - 1, lambda w: w / nu, nu, name=f"{nu:g}*Id")
    block = DualBlock(np.zeros(n - 1), make_prox_l1(tau, n - 1), D, L)
    problem = CompositeProblem(np.zeros(n), A, C, [block], known_solution=(x, [v]))
    return ProblemInstance("fused_toy", seed, {"n": n}, problem, (x, [v]), cert,
                           params={"tau": float(tau), "smoothing_nu": nu},
                           data={"obs": obs})


def make_halfspace_pair(angle: float = math.pi / 2) -> ProblemInstance:
    """Two halfspaces through the origin in R^2.

    ``{x_1 <= 0}`` and ``{-cos(angle) x_1 + sin(angle) x_2 <= 0}``. Their
    intersection is a cone of opening ``angle`` containing 0; ``angle = pi/2``
    gives the quadrant ``x <= 0``.
    """
    if not 0 < angle <= math.pi / 2:
        raise ValueError("angle must lie in ]0, pi/2]")
    a2 = np.array([-math.cos(angle), math.sin(angle)])
    if angle == math.pi / 2:
        a2 = np.array([0.0, 1.0])
    ops = [make_projection("halfspace", a=[1.0, 0.0], b=0.0),
           make_projection("halfspace", a=a2, b=0.0)]
    return ProblemInstance("halfspace_pair", None, {"n": 2}, ops, np.zeros(2), 0.0,
                           params={"angle": float(angle)})


def projection_schedule(instance: ProblemInstance, epsilon: float = 0.1, lam="top",
                        U: Optional[Metric] = None) -> OperatorSchedule:
    """Relaxed alternating projections ``x + lam (P_1 P_2 x - x)``.

    ``lam="top"`` uses the largest relaxation ``epsilon + (1 - epsilon)/phi``
    with ``phi = 2/3``.
    """
    ops = instance.problem
    dim = ops[0].dim
    U = U or Metric.identity(dim)
    maps = [resolvent_map(A, 1.0, U) for A in ops]
    phi = compose_constants([T.alpha for T in maps])
    if isinstance(lam, str):
        if lam != "top":
            raise ValueError(f"unknown relaxation policy {lam!r}")
        lam = epsilon + (1.0 - epsilon) / phi
    return OperatorSchedule(len(maps), lambda n: maps, lam, MetricSequence.constant(U), epsilon,
                            phi_at=lambda n: phi)


# ---------------------------------------------------------------- registry

REGISTRY: Dict[str, Callable[..., ProblemInstance]] = {
    "lasso": make_lasso,
    "fused_toy": make_fused_toy,
    "halfspace_pair": make_halfspace_pair,
}

DESCRIPTIONS = {
    "lasso": "l1-regularized least squares (forward-backward); seed, m_rows, n_cols, tau, tau_ratio",
    "fused_toy": "box-constrained smoothed TV denoising (primal-dual); seed, n, tau, smoothing_nu",
    "halfspace_pair": "two halfspaces through 0 in R^2 (relaxed projections); angle",
}


def get_problem(name: str, **kwargs) -> ProblemInstance:
    """Build a registered instance by name."""
    try:
        builder = REGISTRY[name]
    except KeyError:
        raise UnknownProblemError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}") from None
    return builder(**kwargs)
