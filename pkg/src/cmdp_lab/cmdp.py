"""Finite constrained MDP model, induced-chain analysis, and ergodicity audits.

A `Cmdp` bundles the transition tensor, the objective cost table, N constraint
cost tables with their thresholds, and the uniform cost bound. All quantities
are plain float64 numpy arrays, frozen after construction so instances can be
shared freely across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
ILL_CONDITIONED = 1e12


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Cmdp:
    """Finite CMDP with a uniform action set.

    transition[s, a, s'] is the probability of moving to s' from s under a.
    cost[s, a] is the objective single-stage cost, constraint_costs[k, s, a]
    the k-th constraint cost; both lie in [0, cost_bound]. thresholds[k] is
    the positive long-run budget for constraint k.
    """

    transition: np.ndarray
    cost: np.ndarray
    constraint_costs: np.ndarray
    thresholds: np.ndarray
    cost_bound: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "cost", _frozen(self.cost))
        cc = np.array(self.constraint_costs, dtype=float)
        if cc.ndim == 2:  # single constraint given as a bare table
            cc = cc[None, :, :]
        object.__setattr__(self, "constraint_costs", _frozen(cc))
        object.__setattr__(self, "thresholds", _frozen(np.atleast_1d(self.thresholds)))
        object.__setattr__(self, "cost_bound", float(self.cost_bound))
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ValueError(f"transition must be (S, A, S), got {self.transition.shape}")
        if self.cost.shape != self.transition.shape[:2]:
            raise ValueError("cost table shape does not match transition tensor")
        if self.constraint_costs.shape[1:] != self.cost.shape:
            raise ValueError("constraint cost tables do not match transition tensor")
        if self.thresholds.shape != (self.constraint_costs.shape[0],):
            raise ValueError("one threshold per constraint cost table required")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.constraint_costs.shape[0]


@dataclass(frozen=True)
class StateFeatures:
    """Per-state feature vectors f_s, one row per state, each with norm <= 1."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(np.atleast_2d(self.matrix)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]


@dataclass
class ValidationReport:
    ok: bool
    failures: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def validate_cmdp(model: Cmdp) -> ValidationReport:
    """Audit the model invariants: stochastic rows, cost range, thresholds.

    Report-style: never raises, returns every violated invariant.
    """
    failures = []
    row_sums = model.transition.sum(axis=2)
    bad = np.argwhere(np.abs(row_sums - 1.0) > ROW_SUM_TOL)
    for s, a in bad:
        failures.append(f"row sum != 1 at (s={s}, a={a}): {row_sums[s, a]!r}")
    if (model.transition < 0).any():
        failures.append("negative transition probability")
    if (model.cost < 0).any():
        failures.append("negative cost")
    if (model.cost > model.cost_bound).any():
        failures.append(f"cost exceeds bound {model.cost_bound}")
    if (model.constraint_costs < 0).any():
        failures.append("negative constraint cost")
    if (model.constraint_costs > model.cost_bound).any():
        failures.append(f"constraint cost exceeds bound {model.cost_bound}")
    if (model.thresholds <= 0).any():
        failures.append("non-positive threshold")
    return ValidationReport(ok=not failures, failures=failures)


def validate_features(features: StateFeatures) -> ValidationReport:
    """Audit feature norms (<= 1) and full column rank of the feature matrix."""
    failures = []
    norms = np.linalg.norm(features.matrix, axis=1)
    if (norms > 1.0 + 1e-12).any():
        failures.append(f"feature norm exceeds 1: max {norms.max()!r}")
    rank = np.linalg.matrix_rank(features.matrix)
    if rank < features.dim:
        failures.append(f"feature matrix rank {rank} < dim {features.dim}")
    return ValidationReport(ok=not failures, failures=failures)


def induced_chain(model: Cmdp, action_probs: np.ndarray) -> np.ndarray:
    """State chain P_pi[s, s'] = sum_a pi(a|s) p[s, a, s'] under a randomized policy."""
    action_probs = np.asarray(action_probs, dtype=float)
    if action_probs.shape != (model.n_states, model.n_actions):
        raise ValueError(
            f"policy shape {action_probs.shape} does not match model "
            f"({model.n_states} states, {model.n_actions} actions)"
        )
    return np.einsum("sa,sat->st", action_probs, model.transition)


def chain_structure(P: np.ndarray) -> tuple[bool, int]:
    """(irreducible, period) of the positive-entry graph of P.

    Reachability closure decides irreducibility; the period is the gcd of
    cycle lengths through state 0, computed from BFS level differences.
    """
    P = np.asarray(P)
    n = P.shape[0]
    adj = P > 0.0
    reach = adj.copy()
    for _ in range(max(1, int(math.ceil(math.log2(n))) + 1)):
        reach = reach | (reach @ reach)
    irreducible = bool(reach.all())
    if not irreducible:
        return False, 0
    # BFS from state 0; gcd over edges (u, v) of dist(u) + 1 - dist(v)
    dist = np.full(n, -1, dtype=int)
    dist[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.nonzero(adj[u])[0]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    g = 0
    for u in range(n):
        for v in np.nonzero(adj[u])[0]:
            g = math.gcd(g, dist[u] + 1 - dist[v])
    return True, abs(g)


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Unique stationary distribution of an irreducible aperiodic chain.

    Solves the augmented linear system (P^T - I) mu = 0, sum(mu) = 1 directly,
    falling back to power iteration when the system is ill-conditioned.
    Raises ValueError for reducible or periodic chains.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    irreducible, period = chain_structure(P)
    if not irreducible or period != 1:
        raise ValueError("no unique stationary distribution (chain reducible or periodic)")
    M = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    if np.linalg.cond(M) < ILL_CONDITIONED:
        mu, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    else:
        mu = np.full(n, 1.0 / n)
        for _ in range(1_000_000):
            nxt = mu @ P
            if np.abs(nxt - mu).max() < 1e-15:
                mu = nxt
                break
            mu = nxt
    mu = np.clip(mu, 0.0, None)
    mu = mu / mu.sum()
    if np.abs(mu @ P - mu).max() > STATIONARY_TOL:
        raise ValueError("stationary solve failed residual check")
    return mu


@dataclass
class MixingProfile:
    """Worst-case total-variation distances d_tau and a fitted geometric envelope.

    distances[tau] = max_x 0.5 * sum_y |P^tau(x, y) - mu(y)|. The fit solves
    log d_tau ~ log(scale) + tau*log(rate) by least squares over the strictly
    positive distances; rate >= 1 means the chain failed the mixing audit.
    """

    distances: np.ndarray
    scale: float
    rate: float
    mixes: bool


def mixing_profile(P: np.ndarray, mu: np.ndarray, horizon: int) -> MixingProfile:
    P = np.asarray(P, dtype=float)
    mu = np.asarray(mu, dtype=float)
    distances = np.empty(horizon + 1)
    Pt = np.eye(P.shape[0])
    for tau in range(horizon + 1):
        distances[tau] = 0.5 * np.abs(Pt - mu[None, :]).sum(axis=1).max()
        Pt = Pt @ P
    positive = distances > 1e-15
    taus = np.nonzero(positive)[0]
    if len(taus) == 0:
        return MixingProfile(distances, 0.0, 0.0, True)
    if len(taus) == 1:
        # everything past the first step mixed exactly
        return MixingProfile(distances, float(distances[taus[0]]), 0.0, True)
    slope, intercept = np.polyfit(taus, np.log(distances[taus]), 1)
    rate = float(np.exp(slope))
    return MixingProfile(distances, float(np.exp(intercept)), rate, mixes=rate < 1.0)


# ---------------------------------------------------------------------------
# Serialization: JSON-compatible document, value-identical round trips.
# ---------------------------------------------------------------------------


def to_document(
    model: Cmdp,
    state_features: StateFeatures | None = None,
    sa_features: np.ndarray | None = None,
) -> dict:
    doc = {
        "n_states": model.n_states,
        "n_actions": model.n_actions,
        "transition": model.transition.tolist(),
        "cost": model.cost.tolist(),
        "constraint_costs": model.constraint_costs.tolist(),
        "thresholds": model.thresholds.tolist(),
        "cost_bound": model.cost_bound,
    }
    if state_features is not None:
        doc["state_features"] = state_features.matrix.tolist()
    if sa_features is not None:
        doc["sa_features"] = np.asarray(sa_features).tolist()
    return doc


def from_document(doc: dict) -> tuple[Cmdp, StateFeatures | None, np.ndarray | None]:
    model = Cmdp(
        transition=doc["transition"],
        cost=doc["cost"],
        constraint_costs=doc["constraint_costs"],
        thresholds=doc["thresholds"],
        cost_bound=doc.get("cost_bound", 1.0),
    )
    if model.n_states != doc["n_states"] or model.n_actions != doc["n_actions"]:
        raise ValueError("document dimensions disagree with its arrays")
    feats = None
    if "state_features" in doc:
        feats = StateFeatures(matrix=np.array(doc["state_features"], dtype=float))
    sa = None
    if "sa_features" in doc:
        sa = np.array(doc["sa_features"], dtype=float)
    return model, feats, sa


def save_cmdp(
    path: str | Path,
    model: Cmdp,
    state_features: StateFeatures | None = None,
    sa_features: np.ndarray | None = None,
) -> None:
    doc = to_document(model, state_features, sa_features)
    Path(path).write_text(json.dumps(doc) + "\n")


def load_cmdp(path: str | Path) -> tuple[Cmdp, StateFeatures | None, np.ndarray | None]:
    return from_document(json.loads(Path(path).read_text()))
