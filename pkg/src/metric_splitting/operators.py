"""Averaged, cocoercive and maximally monotone operators in the ``(H, U^{-1})`` geometry.

Every map built here carries the metric U with respect to which it is
averaged: a resolvent ``J_{gamma U A}`` is firmly nonexpansive (1/2-averaged)
on ``(H, U^{-1})`` and the forward step ``Id - gamma U B`` is
``gamma ||U|| / (2 beta)``-averaged there as long as ``gamma <= 2 beta / ||U||``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import DimensionError, ParameterWindowError
from .metric import Metric, inverse
from .reports import PropertyReport

Vector = np.ndarray


@dataclass(frozen=True)
class AveragedMap:
    """A single-valued map declared ``alpha``-averaged on ``(H, U^{-1})``.

    ``alpha == 1`` means nonexpansive only.
    """

    dim: int
    apply: Callable[[Vector], Vector]
    alpha: float
    metric_ctx: Metric
    name: str = ""

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"averagedness constant must lie in ]0,1], got {self.alpha!r}")
        if self.metric_ctx.dim != self.dim:
            raise DimensionError("metric dimension does not match map dimension")

    def __call__(self, x):
        return self.apply(x)


@dataclass(frozen=True)
class MonotoneOp:
    """A maximally monotone operator known through its resolvents.

    Parameters
    ----------
    resolvent : callable ``(gamma, U, x) -> J_{gamma U A}(x)``
    membership : callable ``(x, u, tol) -> bool`` testing ``u in A x``, optional
    inverse_resolvent : callable ``(gamma, U, v) -> J_{gamma U A^{-1}}(v)``, optional.
        When absent it is derived from ``resolvent`` by the Moreau identity.
    """

    dim: int
    resolvent: Callable[[float, Metric, Vector], Vector]
    membership: Optional[Callable[[Vector, Vector, float], bool]] = None
    inverse_resolvent: Optional[Callable[[float, Metric, Vector], Vector]] = None
    name: str = ""


@dataclass(frozen=True)
class CocoerciveOp:
    """``beta``-cocoercive single-valued operator."""

    dim: int
    apply: Callable[[Vector], Vector]
    beta: float
    name: str = ""

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("cocoercivity constant must be positive")

    def __call__(self, x):
        return self.apply(x)


@dataclass(frozen=True)
class StronglyMonotoneOp:
    """``nu``-strongly monotone D, represented through ``D^{-1}``."""

    dim: int
    inverse_apply: Callable[[Vector], Vector]
    nu: float
    name: str = ""

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("strong monotonicity constant must be positive")

    def as_cocoercive(self) -> CocoerciveOp:
        """``D^{-1}`` viewed as a ``nu``-cocoercive operator."""
        return CocoerciveOp(self.dim, self.inverse_apply, self.nu, name=f"inv({self.name})")


def zero_operator(dim: int) -> MonotoneOp:
    """A = 0; every resolvent is the identity and ``A^{-1}`` is the normal cone of {0}."""

    def resolvent(gamma, U, x):
        return np.array(x, dtype=float)

    def membership(x, u, tol=1e-10):
        return bool(np.max(np.abs(u), initial=0.0) <= tol)

    def inverse_resolvent(gamma, U, v):
        return np.zeros(dim)

    return MonotoneOp(dim, resolvent, membership, inverse_resolvent, name="zero")


def zero_gradient(dim: int, beta: float = 1.0) -> CocoerciveOp:
    """B = 0, cocoercive with any constant; ``beta`` is the declared one."""
    return CocoerciveOp(dim, lambda x: np.zeros(dim), beta, name="zero")


# ------------------------------------------------------------ composition

def _pair_constant(a1: float, a2: float) -> float:
    return (a1 + a2 - 2.0 * a1 * a2) / (1.0 - a1 * a2)


def compose_constants(alphas: Sequence[float]) -> float:
    """Averagedness constant of ``T_1 ... T_m`` from those of the factors.

    Two factors combine as ``(a1 + a2 - 2 a1 a2) / (1 - a1 a2)``; longer
    lists are folded left to right with that rule.

    >>> compose_constants([0.5, 0.5])
    0.6666666666666666
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValueError("need at least one averagedness constant")
    for a in alphas:
        if not 0.0 < a < 1.0:
            raise ValueError(f"averagedness constants must lie in ]0,1[, got {a!r}")
    phi = alphas[0]
    for a in alphas[1:]:
        phi = _pair_constant(phi, a)
    return phi


def compose(maps: Sequence[AveragedMap]) -> AveragedMap:
    """``T_1 T_2 ... T_m`` (T_m applied first) with the folded constant."""
    maps = list(maps)
    U = maps[0].metric_ctx

    def apply(x):
        for T in reversed(maps):
            x = T.apply(x)
        return x

    alphas = [T.alpha for T in maps]
    alpha = 1.0 if any(a >= 1.0 for a in alphas) else compose_constants(alphas)
    return AveragedMap(maps[0].dim, apply, alpha, U, name="*".join(T.name for T in maps))


def reflector(T: AveragedMap) -> AveragedMap:
    """``R = (1 - 1/alpha) Id + (1/alpha) T``, nonexpansive whenever T is alpha-averaged."""
    inv = 1.0 / T.alpha

    def apply(x):
        x = np.asarray(x, dtype=float)
        return (1.0 - inv) * x + inv * T.apply(x)

    return AveragedMap(T.dim, apply, 1.0, T.metric_ctx, name=f"refl({T.name})")


# ---------------------------------------------------------------- steps

def resolvent_step(A: MonotoneOp, gamma: float, U: Metric, x) -> Vector:
    """``J_{gamma U A}(x)``."""
    if not gamma > 0:
        raise ParameterWindowError("resolvent step", f"gamma must be positive, got {gamma!r}")
    x = np.asarray(x, dtype=float)
    if x.shape != (A.dim,) or U.dim != A.dim:
        raise DimensionError(f"resolvent of a {A.dim}-dimensional operator applied to shape {x.shape}")
    return A.resolvent(gamma, U, x)


def inverse_resolvent_step(A: MonotoneOp, gamma: float, U: Metric, v) -> Vector:
    """``J_{gamma U A^{-1}}(v)``.

    Without a closed form this uses ``v - W J_{W^{-1} A}(W^{-1} v)`` with
    ``W = gamma U``.
    """
    v = np.asarray(v, dtype=float)
    if A.inverse_resolvent is not None:
        return A.inverse_resolvent(gamma, U, v)
    W = U.scaled(gamma)
    return v - W.apply(A.resolvent(1.0, inverse(W), W.solve(v)))


def forward_step(B: CocoerciveOp, gamma: float, U: Metric, x, strict: bool = True) -> Vector:
    """``x - gamma U B x``; requires ``0 < gamma <= 2 beta / ||U||``."""
    if strict:
        _check_forward_window(B, gamma, U)
    x = np.asarray(x, dtype=float)
    return x - gamma * U.apply(B.apply(x))


def _check_forward_window(B, gamma, U):
    bound = 2.0 * B.beta / U.norm_ub
    if not 0.0 < gamma <= bound * (1.0 + 1e-12):
        raise ParameterWindowError(
            "forward step window",
            f"gamma={gamma!r} must lie in ]0, 2*beta/||U||] = ]0, {bound!r}]")


def resolvent_map(A: MonotoneOp, gamma: float, U: Metric) -> AveragedMap:
    return AveragedMap(A.dim, lambda x: resolvent_step(A, gamma, U, x), 0.5, U,
                       name=f"J[{A.name}]")


def forward_map(B: CocoerciveOp, gamma: float, U: Metric, strict: bool = True) -> AveragedMap:
    """Forward step as a map, averaged with constant ``gamma ||U|| / (2 beta)``.

    With ``strict=False`` a step beyond the window is allowed and the map is
    labelled merely nonexpansive (alpha = 1), which is then false; this is for
    deliberate hypothesis-violation experiments only.
    """
    if strict:
        _check_forward_window(B, gamma, U)
    alpha = min(gamma * U.norm_ub / (2.0 * B.beta), 1.0)
    return AveragedMap(B.dim, lambda x: x - gamma * U.apply(B.apply(x)), alpha, U,
                       name=f"F[{B.name}]")


# ------------------------------------------------------------ property checks

def _sample_pairs(dim, samples, scale, rng_seed):
    rng = np.random.default_rng(rng_seed)
    X = scale * rng.standard_normal((samples, dim))
    Y = scale * rng.standard_normal((samples, dim))
    return X, Y


def averaged_margin(T: AveragedMap, x, y, alpha: Optional[float] = None) -> float:
    """Slack in the averagedness inequality for one pair (negative = violation).

    Uses the two-point displacement ``(Id - T)x - (Id - T)y``, measured
    on ``(H, U^{-1})`` with U the map's metric.
    """
    a = T.alpha if alpha is None else alpha
    U = T.metric_ctx
    Tx, Ty = T.apply(x), T.apply(y)
    lhs = U.inv_quad(Tx - Ty)
    defect = U.inv_quad((x - Tx) - (y - Ty))
    rhs = U.inv_quad(x - y) - (1.0 - a) / a * defect
    return rhs - lhs


def check_averaged(T: AveragedMap, samples: int = 1000, tol: float = 1e-9,
                   rng_seed: int = 0) -> PropertyReport:
    """Sample Gaussian pairs and record the worst averagedness margin.

    Samples are standard normal scaled by the condition number of the
    map's metric.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    U = T.metric_ctx
    X, Y = _sample_pairs(T.dim, samples, U.norm_ub / U.alpha_lb, rng_seed)
    margins = np.array([averaged_margin(T, x, y) for x, y in zip(X, Y)])
    k = int(np.argmin(margins))
    worst = float(margins[k])
    return PropertyReport(f"averaged({T.name}, alpha={T.alpha:.6g})", samples, worst,
                          tol, worst >= -tol, k)


def check_cocoercive(B: CocoerciveOp, samples: int = 1000, tol: float = 1e-9,
                     rng_seed: int = 0) -> PropertyReport:
    """Sampled test of ``<x - y, Bx - By> >= beta ||Bx - By||^2``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    X, Y = _sample_pairs(B.dim, samples, 1.0, rng_seed)
    margins = np.empty(samples)
    for k, (x, y) in enumerate(zip(X, Y)):
        d = B.apply(x) - B.apply(y)
        margins[k] = float(np.dot(x - y, d) - B.beta * np.dot(d, d))
    k = int(np.argmin(margins))
    worst = float(margins[k])
    return PropertyReport(f"cocoercive({B.name}, beta={B.beta:.6g})", samples, worst,
                          tol, worst >= -tol, k)


# ---------------------------------------------------------------- linear maps

@dataclass(frozen=True)
class LinearMap:
    """A linear map ``R^n -> R^k`` with an explicit adjoint.

    ``shape`` is ``(k, n)`` as for a matrix.
    """

    shape: tuple
    matvec: Callable[[Vector], Vector]
    rmatvec: Callable[[Vector], Vector]
    name: str = ""

    @classmethod
    def from_matrix(cls, M, name="") -> "LinearMap":
        M = np.array(M, dtype=float)
        M.setflags(write=False)
        return cls(M.shape, lambda x: M @ x, lambda v: M.T @ v, name=name)

    def __call__(self, x):
        return self.matvec(x)

    def adjoint(self, v):
        return self.rmatvec(v)

    def dense(self) -> np.ndarray:
        k, n = self.shape
        return np.column_stack([self.matvec(e) for e in np.eye(n)]) if n else np.zeros((k, 0))

    def norm(self) -> float:
        return float(np.linalg.norm(self.dense(), 2))

    def adjoint_mismatch(self, samples: int = 20, rng_seed: int = 0) -> float:
        """Largest relative gap ``|<Lx, v> - <x, L*v>|`` over sampled pairs."""
        rng = np.random.default_rng(rng_seed)
        k, n = self.shape
        worst = 0.0
        for _ in range(samples):
            x = rng.standard_normal(n)
            v = rng.standard_normal(k)
            Lx, Lv = self.matvec(x), self.rmatvec(v)
            if Lx.shape != (k,) or Lv.shape != (n,):
                return np.inf
            gap = abs(float(np.dot(Lx, v)) - float(np.dot(x, Lv)))
            worst = max(worst, gap / max(1.0, np.linalg.norm(Lx) * np.linalg.norm(v)))
        return worst
