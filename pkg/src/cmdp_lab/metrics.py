"""Tracked error quantities, windowed means, and empirical convergence rates.

Each evaluation snapshots the learner against the exact oracle:
    y_t     = L_t - L(theta_t, gamma_t)        (average-cost tracking error)
    z_sq    = ||v_t - v*(theta_t, gamma_t)||^2 (critic tracking error)
    mbar_sq = ||Mbar(theta_t, v_t, gamma_t)||^2 (stationary actor direction)
plus per-constraint oracle gaps G_k - alpha_k. Windowed means average a field
over records in [tau_t, t] with a logarithmic burn-in index tau_t, and rate
fits regress log(field) on log(t) to estimate decay exponents.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import oracle
from .cmdp import Cmdp, StateFeatures, induced_chain, stationary_distribution
from .policy import SoftmaxPolicy, smoothness_audit

TAU_COEFFICIENT = 10.0
TAU_FLOOR = 4


@dataclass
class MetricsRecord:
    t: int
    L_t: float
    L_oracle: float
    y_t: float
    z_sq: float
    mbar_sq: float
    gamma: np.ndarray
    U: np.ndarray
    gap: np.ndarray

    @property
    def objective(self) -> float:
        """Oracle objective J recovered from L by removing the penalty term."""
        return self.L_oracle - float(np.asarray(self.gamma) @ np.asarray(self.gap))

    @property
    def y_sq(self) -> float:
        return self.y_t**2


@dataclass
class MetricsLog:
    records: list[MetricsRecord]
    lambda_min_g_inv: list[float]
    violations: dict[str, int]
    final_state: object

    def field(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])


def make_oracle_evaluator(model: Cmdp, features: StateFeatures, sa_features: np.ndarray):
    """Evaluator closure computing one MetricsRecord from a learner state.

    Pure function of the snapshot; solves the frozen-(theta, gamma) chain
    exactly at every call.
    """

    def evaluate(state) -> MetricsRecord:
        pol = SoftmaxPolicy(sa_features=sa_features, theta=state.theta)
        gamma = state.gamma.copy()
        probs = pol.prob_matrix()
        P = induced_chain(model, probs)
        mu = stationary_distribution(P)
        weights = mu[:, None] * probs
        J = float((weights * model.cost).sum())
        G_k = np.einsum("sa,ksa->k", weights, model.constraint_costs)
        L = J + float(gamma @ (G_k - model.thresholds))
        fp = oracle.critic_fixed_point(model, pol, gamma, features)
        mbar = oracle.m_bar(model, pol, state.v, gamma, features)
        return MetricsRecord(
            t=state.t,
            L_t=state.L_avg,
            L_oracle=L,
            y_t=state.L_avg - L,
            z_sq=float(np.sum((state.v - fp.v_star) ** 2)),
            mbar_sq=float(np.sum(mbar**2)),
            gamma=gamma,
            U=state.U.copy(),
            gap=G_k - model.thresholds,
        )

    return evaluate


def tau_index(t: int, c_tau: float = TAU_COEFFICIENT, floor: int = TAU_FLOOR) -> int:
    """Burn-in index tau_t = max(floor, min(t//2, ceil(c_tau * ln(1+t)))).

    Logarithmic in t as the mixing-window analyses assume, floored (at 4 by
    default) and never past the midpoint so the window [tau_t, t] keeps at
    least half the horizon.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    return max(floor, min(t // 2, math.ceil(c_tau * math.log1p(t))))


def windowed_mean(
    records: list[MetricsRecord],
    field: str,
    t: int,
    c_tau: float = TAU_COEFFICIENT,
    floor: int = TAU_FLOOR,
) -> float:
    """Mean of a scalar field over records with step index in [tau_t, t]."""
    tau = tau_index(t, c_tau, floor)
    values = [getattr(r, field) for r in records if tau <= r.t <= t]
    if not values:
        raise ValueError(f"no records in window [{tau}, {t}]")
    return float(np.mean(values))


@dataclass
class RateFit:
    """Log-log regression of a tracked field against the step index."""

    t_min: int
    t_max: int
    slope: float
    intercept: float
    r_squared: float
    tau_rule: dict | None = None


def fit_rate(records: list[MetricsRecord], field: str, t_min: int, t_max: int) -> RateFit:
    """Least-squares slope of log(field) against log(t) over [t_min, t_max].

    Requires at least 10 records in range and strictly positive field values.
    """
    sel = [r for r in records if t_min <= r.t <= t_max]
    if len(sel) < 10:
        raise ValueError(f"need >= 10 records in [{t_min}, {t_max}], found {len(sel)}")
    for r in sel:
        if getattr(r, field) <= 0:
            raise ValueError(f"non-positive {field} at t={r.t}; cannot fit a log-log rate")
    x = np.log([r.t for r in sel])
    y = np.log([getattr(r, field) for r in sel])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r_sq = 1.0 if ss_tot == 0 else 1.0 - float((resid**2).sum()) / ss_tot
    return RateFit(
        t_min=t_min,
        t_max=t_max,
        slope=float(slope),
        intercept=float(intercept),
        r_squared=min(max(r_sq, 0.0), 1.0),
    )


@dataclass
class BoundsReport:
    """Empirical constants of the step-size theory for one problem instance.

    B bounds score norms over the grid; U_r bounds the relaxed cost over the
    multiplier box [0, cap]^N; U_bar_v bounds differential values over the
    grid and box vertices; lambda_e is the worst negative-definiteness margin
    of the TD matrix; lambda_G the smallest recorded eigenvalue of the inverse
    Fisher estimate (None without a recorded trail); eps_app the largest
    feature-approximation error seen.
    """

    B: float
    U_r: float
    U_bar_v: float
    lambda_e: float
    lambda_G: float | None
    eps_app: float


def bounds_report(
    model: Cmdp,
    features: StateFeatures,
    sa_features: np.ndarray,
    theta_grid: list[np.ndarray],
    multiplier_cap: float,
    lambda_trail: list[float] | None = None,
) -> BoundsReport:
    if len(theta_grid) == 0:
        raise ValueError("theta grid must be non-empty")
    B = smoothness_audit(sa_features, theta_grid).score_bound

    # relaxed cost is affine in gamma: extremes sit at box vertices, handled
    # coordinatewise since each term has a single gamma_k
    diff = model.constraint_costs - model.thresholds[:, None, None]
    hi = model.cost + multiplier_cap * np.clip(diff, 0.0, None).sum(axis=0)
    lo = model.cost + multiplier_cap * np.clip(diff, None, 0.0).sum(axis=0)
    U_r = float(np.maximum(np.abs(hi), np.abs(lo)).max())

    vertices = []
    for bits in range(2**model.n_constraints):
        vertex = np.array(
            [multiplier_cap if (bits >> k) & 1 else 0.0 for k in range(model.n_constraints)]
        )
        vertices.append(vertex)

    u_bar = 0.0
    lam_e = math.inf
    eps = 0.0
    for theta in theta_grid:
        pol = SoftmaxPolicy(sa_features=sa_features, theta=theta)
        fp = oracle.critic_fixed_point(model, pol, np.zeros(model.n_constraints), features)
        lam_e = min(lam_e, fp.lambda_e)
        for gamma in vertices:
            V = oracle.differential_value(model, pol, gamma)
            u_bar = max(u_bar, float(np.abs(V).max()))
            eps = max(eps, oracle.approximation_error(model, pol, gamma, features))
    lam_G = None if lambda_trail is None else float(min(lambda_trail))
    return BoundsReport(
        B=B, U_r=U_r, U_bar_v=u_bar, lambda_e=float(lam_e), lambda_G=lam_G, eps_app=eps
    )


# ---------------------------------------------------------------------------
# CSV schema: one row per evaluation, full decimal precision.
# ---------------------------------------------------------------------------


def csv_header(n_constraints: int) -> list[str]:
    cols = ["t", "L_t", "L_oracle", "y_t", "z_sq", "mbar_sq"]
    cols += [f"gamma_{k + 1}" for k in range(n_constraints)]
    cols += [f"U_{k + 1}" for k in range(n_constraints)]
    cols += [f"gap_{k + 1}" for k in range(n_constraints)]
    return cols


def records_to_csv(records: list[MetricsRecord]) -> str:
    if not records:
        raise ValueError("no records to serialize")
    n = len(records[0].gamma)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_header(n))
    for r in records:
        row = [r.t, repr(r.L_t), repr(r.L_oracle), repr(r.y_t), repr(r.z_sq), repr(r.mbar_sq)]
        row += [repr(float(g)) for g in r.gamma]
        row += [repr(float(u)) for u in r.U]
        row += [repr(float(g)) for g in r.gap]
        writer.writerow(row)
    return buf.getvalue()


def write_csv(path: str | Path, records: list[MetricsRecord]) -> None:
    Path(path).write_text(records_to_csv(records))


def read_csv(path: str | Path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = sum(1 for c in header if c.startswith("gamma_"))
    out = []
    for row in body:
        vals = [float(x) for x in row[1:]]
        out.append(
            MetricsRecord(
                t=int(row[0]),
                L_t=vals[0],
                L_oracle=vals[1],
                y_t=vals[2],
                z_sq=vals[3],
                mbar_sq=vals[4],
                gamma=np.array(vals[5 : 5 + n]),
                U=np.array(vals[5 + n : 5 + 2 * n]),
                gap=np.array(vals[5 + 2 * n : 5 + 3 * n]),
            )
        )
    return out
