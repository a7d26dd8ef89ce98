"""Symmetric positive definite metrics on R^d.

A :class:`Metric` stores either the diagonal of U or a dense symmetric
matrix, together with certified bounds ``alpha_lb * Id <= U <= norm_ub * Id``.
The bounds are checked once, when the metric is built, and then reused by
every step-size window downstream.

Algorithms in this package measure distances in the geometry of ``U^{-1}``
(the maps are averaged on ``(H, U^{-1})``), so :meth:`Metric.inv_quad` is the
workhorse; :func:`inner_u` and :func:`norm_u` give the ``(H, U)`` versions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .exceptions import DimensionError, MetricError
from .reports import ValidationReport

# relative slack when checking declared spectral bounds against eigenvalues
_BOUND_RTOL = 1e-10
_MAX_COND = 1e14


@dataclass(frozen=True, eq=False)
class Metric:
    """An SPD operator U with certified spectral bounds.

    Use the constructors :meth:`identity`, :meth:`diagonal` and
    :meth:`from_matrix` rather than the raw initializer.
    """

    diag: Optional[np.ndarray]
    dense: Optional[np.ndarray]
    alpha_lb: float
    norm_ub: float

    # ------------------------------------------------------------------ build
    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "Metric":
        return cls.diagonal(np.full(int(dim), float(scale)))

    @classmethod
    def diagonal(cls, d, alpha_lb=None, norm_ub=None) -> "Metric":
        d = np.array(d, dtype=float).reshape(-1)
        if d.size == 0:
            raise MetricError("empty metric")
        if not np.all(np.isfinite(d)):
            raise MetricError("non-finite diagonal entries")
        d.setflags(write=False)
        lo, hi = float(d.min()), float(d.max())
        return cls._checked(d, None, lo, hi, alpha_lb, norm_ub)

    @classmethod
    def from_matrix(cls, M, alpha_lb=None, norm_ub=None) -> "Metric":
        M = np.array(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise MetricError(f"metric must be square, got shape {M.shape}")
        if not np.all(np.isfinite(M)):
            raise MetricError("non-finite matrix entries")
        if not np.array_equal(M, M.T):
            raise MetricError("metric matrix is not exactly symmetric")
        M.setflags(write=False)
        eig = np.linalg.eigvalsh(M)
        return cls._checked(None, M, float(eig[0]), float(eig[-1]), alpha_lb, norm_ub)

    @classmethod
    def _checked(cls, diag, dense, lo, hi, alpha_lb, norm_ub):
        if lo <= 0.0:
            raise MetricError(f"metric is not positive definite (lambda_min={lo:.3e})")
        if alpha_lb is None:
            alpha_lb = lo
        if norm_ub is None:
            norm_ub = hi
        alpha_lb, norm_ub = float(alpha_lb), float(norm_ub)
        if alpha_lb <= 0.0:
            raise MetricError("alpha_lb must be positive")
        if lo < alpha_lb * (1.0 - _BOUND_RTOL):
            raise MetricError(f"lambda_min={lo!r} is below declared alpha_lb={alpha_lb!r}")
        if hi > norm_ub * (1.0 + _BOUND_RTOL):
            raise MetricError(f"||U||={hi!r} exceeds declared norm_ub={norm_ub!r}")
        return cls(diag, dense, alpha_lb, norm_ub)

    # ------------------------------------------------------------- accessors
    @property
    def dim(self) -> int:
        return int(self.diag.size if self.diag is not None else self.dense.shape[0])

    @property
    def is_diagonal(self) -> bool:
        return self.diag is not None

    @property
    def matrix(self) -> np.ndarray:
        if self.diag is not None:
            return np.diag(self.diag)
        return np.array(self.dense)

    @property
    def norm(self) -> float:
        """Certified upper bound on the spectral norm (what the windows use)."""
        return self.norm_ub

    @cached_property
    def _inv_dense(self):
        return _sym(np.linalg.inv(self.dense))

    @cached_property
    def is_scalar(self) -> bool:
        """True for c*Id (diagonal with all entries equal)."""
        return self.diag is not None and bool(np.all(self.diag == self.diag[0]))

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionError(f"expected vector of length {self.dim}, got shape {x.shape}")
        return x

    def apply(self, x) -> np.ndarray:
        """Return ``U x``."""
        x = self._check(x)
        if self.diag is not None:
            return self.diag * x
        return self.dense @ x

    def solve(self, x) -> np.ndarray:
        """Return ``U^{-1} x``."""
        x = self._check(x)
        if self.diag is not None:
            return x / self.diag
        return self._inv_dense @ x

    def inv_quad(self, x) -> float:
        """``<U^{-1} x, x>``, the squared norm of x on ``(H, U^{-1})``."""
        x = self._check(x)
        if self.diag is not None:
            return float(np.dot(x * x, 1.0 / self.diag))
        return float(x @ (self._inv_dense @ x))

    def inv_norm(self, x) -> float:
        return math.sqrt(max(self.inv_quad(x), 0.0))

    def scaled(self, c: float) -> "Metric":
        """Return ``c U`` (c > 0) with bounds scaled accordingly."""
        c = float(c)
        if c <= 0:
            raise MetricError("scale must be positive")
        if self.diag is not None:
            d = self.diag * c
            d.setflags(write=False)
            return Metric(d, None, self.alpha_lb * c, self.norm_ub * c)
        M = self.dense * c
        M.setflags(write=False)
        return Metric(None, M, self.alpha_lb * c, self.norm_ub * c)

    def to_json(self):
        if self.diag is not None:
            return {"kind": "diagonal", "diag": self.diag.tolist()}
        return {"kind": "dense", "matrix": self.dense.tolist()}

    def __repr__(self):
        kind = "diagonal" if self.diag is not None else "dense"
        return f"Metric({kind}, dim={self.dim}, alpha_lb={self.alpha_lb:.4g}, norm_ub={self.norm_ub:.4g})"


def _sym(M):
    return 0.5 * (M + M.T)


def _same_dim(U, V):
    if U.dim != V.dim:
        raise DimensionError(f"metric dimensions differ: {U.dim} vs {V.dim}")


def inner_u(U: Metric, x, y) -> float:
    """Inner product ``<U x, y>`` of the space ``(H, U)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionError(f"vector shapes differ: {x.shape} vs {y.shape}")
    return float(np.dot(U.apply(x), y))


def norm_u(U: Metric, x) -> float:
    return math.sqrt(max(inner_u(U, x, x), 0.0))


def loewner_geq(Ulhs: Metric, Urhs: Metric, tol: Optional[float] = None) -> bool:
    """Test ``Ulhs >= Urhs`` in the Loewner order.

    Diagonal pairs are compared entrywise; anything else goes through a
    symmetric eigensolve of the difference. The default tolerance is
    ``1e-10 * max(||Ulhs||, ||Urhs||)``.
    """
    _same_dim(Ulhs, Urhs)
    if tol is None:
        tol = 1e-10 * max(Ulhs.norm_ub, Urhs.norm_ub)
    return loewner_margin(Ulhs, Urhs) >= -tol


def loewner_margin(Ulhs: Metric, Urhs: Metric) -> float:
    """Smallest eigenvalue of ``Ulhs - Urhs``."""
    _same_dim(Ulhs, Urhs)
    if Ulhs.is_diagonal and Urhs.is_diagonal:
        return float(np.min(Ulhs.diag - Urhs.diag))
    return float(np.linalg.eigvalsh(_sym(Ulhs.matrix - Urhs.matrix))[0])


def inverse(U: Metric) -> Metric:
    """Return ``U^{-1}``; its bounds are ``1/norm_ub`` and ``1/alpha_lb``."""
    lo, hi = 1.0 / U.norm_ub, 1.0 / U.alpha_lb
    if U.norm_ub / U.alpha_lb > _MAX_COND:
        raise MetricError("metric is singular to working precision")
    if U.is_diagonal:
        d = 1.0 / U.diag
        d.setflags(write=False)
        return Metric._checked(d, None, float(d.min()), float(d.max()), lo, hi)
    M = _sym(np.linalg.inv(U.dense))
    M.setflags(write=False)
    eig = np.linalg.eigvalsh(M)
    return Metric._checked(None, M, float(eig[0]), float(eig[-1]), lo, hi)


def sqrt(U: Metric) -> Metric:
    """Symmetric square root; dense inputs go through an eigendecomposition
    with eigenvalues clamped at ``alpha_lb``."""
    lo, hi = math.sqrt(U.alpha_lb), math.sqrt(U.norm_ub)
    if U.is_diagonal:
        d = np.sqrt(U.diag)
        d.setflags(write=False)
        return Metric(d, None, lo, hi)
    w, Q = np.linalg.eigh(U.dense)
    w = np.maximum(w, U.alpha_lb)
    M = _sym((Q * np.sqrt(w)) @ Q.T)
    M.setflags(write=False)
    return Metric(None, M, lo, hi)


# ---------------------------------------------------------------- sequences

MetricSource = Union[Sequence[Metric], Callable[[int], Metric]]


@dataclass
class MetricSequence:
    """Variable metrics ``U_0, U_1, ...`` with ordering slack ``eta_n``.

    ``metrics`` is either a finite list (the last entry repeats forever) or a
    rule ``n -> Metric``. ``eta`` is a finite list; missing entries are 0.
    ``eta_sum`` is the declared value of the full series sum of eta.
    ``alpha`` and ``mu`` are the declared uniform bounds; when omitted they
    are taken from the listed metrics.
    """

    metrics: MetricSource
    eta: Sequence[float] = field(default_factory=list)
    eta_sum: Optional[float] = None
    alpha: Optional[float] = None
    mu: Optional[float] = None

    def __post_init__(self):
        self.eta = [float(e) for e in self.eta]
        if any(e < 0 or not math.isfinite(e) for e in self.eta):
            raise MetricError("eta_n must be finite and nonnegative")
        if not callable(self.metrics):
            self.metrics = list(self.metrics)
            if not self.metrics:
                raise MetricError("metric sequence is empty")
            dims = {U.dim for U in self.metrics}
            if len(dims) != 1:
                raise DimensionError(f"metrics have differing dimensions {sorted(dims)}")
            if self.alpha is None:
                self.alpha = min(U.alpha_lb for U in self.metrics)
            if self.mu is None:
                self.mu = max(U.norm_ub for U in self.metrics)
        if self.eta_sum is None:
            self.eta_sum = float(sum(self.eta))

    @classmethod
    def constant(cls, U: Metric) -> "MetricSequence":
        return cls([U])

    @property
    def is_constant(self) -> bool:
        return not callable(self.metrics) and len(self.metrics) == 1

    @property
    def dim(self) -> int:
        return self[0].dim

    def __getitem__(self, n: int) -> Metric:
        if callable(self.metrics):
            return self.metrics(n)
        return self.metrics[min(n, len(self.metrics) - 1)]

    def eta_at(self, n: int) -> float:
        return self.eta[n] if n < len(self.eta) else 0.0

    def horizon(self) -> int:
        """Number of distinct listed metrics (1 for rule-based sequences)."""
        return 1 if callable(self.metrics) else len(self.metrics)

    def to_json(self):
        if callable(self.metrics):
            raise TypeError("rule-based metric sequences are not serializable")
        kinds = {"diagonal" if U.is_diagonal else "dense" for U in self.metrics}
        kind = "diagonal" if kinds == {"diagonal"} else "dense"
        if kind == "diagonal":
            data = [U.diag.tolist() for U in self.metrics]
        else:
            data = [U.matrix.tolist() for U in self.metrics]
        return {"kind": kind, "metrics": data, "eta": list(self.eta)}


def validate_sequence(seq: MetricSequence, tol: Optional[float] = None,
                      horizon: Optional[int] = None,
                      non_decreasing: bool = False) -> ValidationReport:
    """Check the variable-metric hypotheses over a finite horizon.

    Per n this checks ``(1 + eta_n) U_{n+1} >= U_n``, the uniform lower
    bound ``alpha`` and the running maximum of ``||U_n||`` against ``mu``,
    and finally that the listed eta do not exceed the declared sum.
    With ``non_decreasing`` the slack is ignored and ``U_{n+1} >= U_n`` is
    required outright.
    """
    report = ValidationReport()
    if horizon is None:
        horizon = seq.horizon()
    horizon = max(int(horizon), 1)
    order_ok, first_bad = True, None
    running_max, norms = 0.0, []
    alpha_ok, alpha_bad = True, None
    for n in range(horizon):
        U = seq[n]
        running_max = max(running_max, U.norm_ub)
        norms.append(running_max)
        if seq.alpha is not None and U.alpha_lb < seq.alpha * (1 - _BOUND_RTOL) and alpha_ok:
            alpha_ok, alpha_bad = False, n
        if n + 1 < horizon:
            Unext = seq[n + 1]
            scale = 1.0 if non_decreasing else 1.0 + seq.eta_at(n)
            t = tol if tol is not None else 1e-10 * max(U.norm_ub, Unext.norm_ub * scale)
            ok = loewner_margin(Unext.scaled(scale), U) >= -t
            if not ok and order_ok:
                order_ok, first_bad = False, n
    label = "U_{n+1} >= U_n" if non_decreasing else "(1+eta_n) U_{n+1} >= U_n"
    report.add(f"metric ordering {label}", order_ok, first_bad,
               "" if order_ok else "Loewner ordering violated")
    report.add("uniform lower bound alpha", alpha_ok, alpha_bad,
               f"alpha={seq.alpha!r}")
    mu = seq.mu if seq.mu is not None else running_max
    report.add("sup ||U_n|| <= mu", running_max <= mu * (1 + _BOUND_RTOL), None,
               f"running max {running_max:.6g}, mu={mu:.6g}")
    partial = float(sum(seq.eta))
    report.add("sum eta_n within declared sum",
               partial <= seq.eta_sum * (1 + _BOUND_RTOL) + 1e-15, None,
               f"partial {partial:.6g}, declared {seq.eta_sum:.6g}")
    if non_decreasing and any(e > 0 for e in seq.eta):
        report.add("eta ignored", True, None, "non-decreasing metrics required; eta unused")
    report.data["running_max_norm"] = norms
    return report


# ------------------------------------------------------------------- json io

def metric_sequence_from_json(doc) -> MetricSequence:
    """Build a sequence from ``{"kind": ..., "metrics": [...], "eta": [...]}``.

    Dense metrics are given row-major, as nested lists or flat lists of
    length d*d.
    """
    if isinstance(doc, (str, Path)):
        doc = json.loads(Path(doc).read_text())
    kind = doc.get("kind")
    raw = doc.get("metrics")
    if not raw:
        raise MetricError("metric document has no metrics")
    if kind == "diagonal":
        metrics = [Metric.diagonal(d) for d in raw]
    elif kind == "dense":
        metrics = []
        for m in raw:
            a = np.asarray(m, dtype=float)
            if a.ndim == 1:
                d = int(round(math.sqrt(a.size)))
                if d * d != a.size:
                    raise MetricError("flat dense metric length is not a square")
                a = a.reshape(d, d)
            metrics.append(Metric.from_matrix(a))
    else:
        raise MetricError(f"unknown metric kind {kind!r}")
    return MetricSequence(metrics, eta=doc.get("eta", []), eta_sum=doc.get("eta_sum"))
