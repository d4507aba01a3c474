"""Step-size schedules for the three-timescale learner and their validity rules.

Two families are supported. The standard family uses plain power decays
    a(t) = c_a/(1+t)^nu,  b(t) = c_b/(1+t)^sigma,
    c(t) = c_c/(1+t)^beta, d(t) = c_d/(1+t)^nu,
subject to 0 < nu < sigma < beta <= 1, 2*sigma - nu < beta and 2*sigma < 3*nu,
plus a coefficient-ratio cap on c_a/c_d built from policy bounds. The modified
family accelerates the fast pair with a sqrt-log factor,
    a(t) = c_a sqrt(ln(1+t))/(1+t)^nu,  d(t) likewise,  b(t) = c_b/(1+t)^nu,
    c(t) = c_c/(1+t)^beta,
subject to 0.5 <= nu < beta <= 1. In both families the average-cost and actor
steps form the fastest timescale, the critic is slower and the Lagrange
multiplier slowest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

POWER = "power"
POWER_LOG = "power_log"
STANDARD = "standard"
MODIFIED = "modified"

DEFAULT_COEFFICIENTS = {"c_a": 0.1, "c_b": 0.5, "c_c": 0.05, "c_d": 1.0}
DEFAULT_DELTA = 0.02


@dataclass(frozen=True)
class StepSchedule:
    """One decaying step-size sequence.

    kind "power": c/(1+t)^e; kind "power_log": c*sqrt(ln(1+t))/(1+t)^e (which
    is 0 at t = 0). Coefficient 0 is allowed so a recursion can be switched
    off for frozen-parameter diagnostics.
    """

    kind: str
    coefficient: float
    exponent: float

    def __post_init__(self):
        if self.kind not in (POWER, POWER_LOG):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.coefficient < 0:
            raise ValueError("negative schedule coefficient")
        if not 0 < self.exponent <= 1:
            raise ValueError("schedule exponent must lie in (0, 1]")

    def value_at(self, t: float) -> float:
        """Value at step t; t is an integer in the learner, but the formula
        extends to real arguments for closed-form checks."""
        if t < 0:
            raise ValueError("schedule index must be non-negative")
        base = self.coefficient / (1.0 + t) ** self.exponent
        if self.kind == POWER_LOG:
            base *= math.sqrt(math.log1p(t))
        return base

    def robbins_monro(self) -> tuple[bool, bool]:
        """(sum diverges, sum of squares converges), decided by exponent.

        The sqrt-log factor never changes either verdict: sums diverge iff
        e <= 1 and square sums converge iff e > 0.5, for both kinds.
        """
        return self.exponent <= 1.0, self.exponent > 0.5


@dataclass(frozen=True)
class ScheduleSet:
    """The four sequences: a (actor), b (critic), c (Lagrange), d (average cost)."""

    a: StepSchedule
    b: StepSchedule
    c: StepSchedule
    d: StepSchedule
    mode: str = STANDARD

    def __post_init__(self):
        if self.mode not in (STANDARD, MODIFIED):
            raise ValueError(f"unknown schedule mode {self.mode!r}")

    @classmethod
    def standard(cls, nu: float, sigma: float, beta: float, **coeff) -> "ScheduleSet":
        c = {**DEFAULT_COEFFICIENTS, **coeff}
        return cls(
            a=StepSchedule(POWER, c["c_a"], nu),
            b=StepSchedule(POWER, c["c_b"], sigma),
            c=StepSchedule(POWER, c["c_c"], beta),
            d=StepSchedule(POWER, c["c_d"], nu),
            mode=STANDARD,
        )

    @classmethod
    def modified(cls, nu: float, beta: float, **coeff) -> "ScheduleSet":
        c = {**DEFAULT_COEFFICIENTS, **coeff}
        return cls(
            a=StepSchedule(POWER_LOG, c["c_a"], nu),
            b=StepSchedule(POWER, c["c_b"], nu),
            c=StepSchedule(POWER, c["c_c"], beta),
            d=StepSchedule(POWER_LOG, c["c_d"], nu),
            mode=MODIFIED,
        )


@dataclass(frozen=True)
class PolicyBoundEstimates:
    """Empirical constants feeding the coefficient-ratio check.

    B bounds score norms, U_v is the critic projection radius, U_bar_v bounds
    the differential value, U_r the relaxed single-stage cost, lambda_G the
    smallest and U_G the largest eigenvalue seen for the inverse Fisher
    estimate. These are estimates, so the ratio verdict is advisory.
    """

    B: float
    U_v: float
    U_bar_v: float
    U_r: float
    lambda_G: float
    U_G: float

    @property
    def U_w(self) -> float:
        return 2.0 * self.B * (self.U_v + self.U_bar_v)

    @property
    def G(self) -> float:
        return 2.0 * self.B * (self.U_r + self.U_v)

    def ratio_cap(self) -> float:
        """Upper bound required of c_a/c_d."""
        return 1.0 / (2.0 * self.B * (self.U_G / self.lambda_G) * (self.G + self.U_w)
                      + self.U_w * self.B)


@dataclass
class ConstraintCheck:
    name: str
    passed: bool
    detail: str
    advisory: bool = False


@dataclass
class ScheduleValidation:
    checks: list[ConstraintCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if not c.advisory)

    def __bool__(self) -> bool:
        return self.ok

    def failures(self) -> list[ConstraintCheck]:
        return [c for c in self.checks if not c.passed and not c.advisory]


def validate(schedules: ScheduleSet, bounds: PolicyBoundEstimates | None = None) -> ScheduleValidation:
    """Check every constraint the chosen mode imposes on exponents and kinds.

    When bound estimates are supplied, the c_a/c_d ratio cap is evaluated too,
    flagged advisory since the constants are empirical.
    """
    out = ScheduleValidation()

    def check(name, passed, detail, advisory=False):
        out.checks.append(ConstraintCheck(name, bool(passed), detail, advisory))

    nu, sigma, beta = schedules.a.exponent, schedules.b.exponent, schedules.c.exponent
    check(
        "a/d same timescale",
        schedules.a.kind == schedules.d.kind and schedules.a.exponent == schedules.d.exponent,
        "a and d must share kind and exponent",
    )
    if schedules.mode == STANDARD:
        check(
            "kinds",
            all(s.kind == POWER for s in (schedules.a, schedules.b, schedules.c, schedules.d)),
            "standard mode uses plain power schedules",
        )
        check("0 < ν < σ < β ≤ 1", 0 < nu < sigma < beta <= 1,
              f"nu={nu}, sigma={sigma}, beta={beta}")
        check("2σ − ν < β", 2 * sigma - nu < beta, f"2sigma-nu={2 * sigma - nu}, beta={beta}")
        check("2σ < 3ν", 2 * sigma < 3 * nu, f"2sigma={2 * sigma}, 3nu={3 * nu}")
    else:
        check(
            "kinds",
            schedules.a.kind == POWER_LOG
            and schedules.d.kind == POWER_LOG
            and schedules.b.kind == POWER
            and schedules.c.kind == POWER,
            "modified mode needs sqrt-log a and d, power b and c",
        )
        check("b exponent equals ν", schedules.b.exponent == nu,
              f"critic exponent {schedules.b.exponent}, nu={nu}")
        check("0.5 ≤ ν < β ≤ 1", 0.5 <= nu < beta <= 1, f"nu={nu}, beta={beta}")
    if bounds is not None:
        ratio = math.inf if schedules.d.coefficient == 0 else (
            schedules.a.coefficient / schedules.d.coefficient
        )
        cap = bounds.ratio_cap()
        check(
            "c_a/c_d ratio cap",
            ratio < cap,
            f"c_a/c_d={ratio!r} vs cap {cap!r} (from bound estimates)",
            advisory=True,
        )
    return out


def optimal_exponents(mode: str, delta: float = DEFAULT_DELTA):
    """Rate-optimal exponents: standard -> (0.5, 0.5+delta, 1.0) for any small
    delta > 0; modified -> (0.5, 1.0)."""
    if mode == STANDARD:
        if delta <= 0:
            raise ValueError("delta must be strictly positive (sigma must exceed nu)")
        return 0.5, 0.5 + delta, 1.0
    if mode == MODIFIED:
        return 0.5, 1.0
    raise ValueError(f"unknown schedule mode {mode!r}")
