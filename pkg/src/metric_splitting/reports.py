"""Plain result containers returned by validators and property checks."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional


@dataclass
class Check:
    name: str
    ok: bool
    n: Optional[int] = None
    detail: str = ""

    def describe(self) -> str:
        where = "" if self.n is None else f" (first violation at n={self.n})"
        return f"{self.name}{where}: {self.detail}" if self.detail else f"{self.name}{where}"


@dataclass
class ValidationReport:
    """Outcome of a hypothesis check over a finite horizon.

    A report never raises by itself; callers decide whether a failure is
    fatal. Checks that cannot be decided numerically go in ``assumed``.
    """

    checks: list = field(default_factory=list)
    assumed: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def add(self, name, ok, n=None, detail=""):
        self.checks.append(Check(name, bool(ok), n, detail))
        return ok

    def extend(self, other: "ValidationReport", prefix=""):
        for c in other.checks:
            self.checks.append(Check(prefix + c.name, c.ok, c.n, c.detail))
        self.assumed.extend(other.assumed)
        for k, v in other.data.items():
            self.data[prefix + k] = v

    def first_failure(self) -> Optional[Check]:
        for c in self.checks:
            if not c.ok:
                return c
        return None

    def failures(self):
        return [c for c in self.checks if not c.ok]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [asdict(c) for c in self.checks],
            "assumed": list(self.assumed),
            "data": self.data,
        }

    def summary(self) -> str:
        lines = [f"{'PASS' if c.ok else 'FAIL'}  {c.describe()}" for c in self.checks]
        lines += [f"ASSUMED  {a}" for a in self.assumed]
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


@dataclass
class PropertyReport:
    """Result of a sampled inequality check (worst margin over all pairs)."""

    name: str
    samples: int
    worst_margin: float
    tol: float
    passed: bool
    worst_index: int = -1
