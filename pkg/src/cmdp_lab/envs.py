"""Seeded generators for desk-scale constrained MDP instances and feature maps.

Every generated transition row is a mixture of a Dirichlet draw with the
uniform distribution so that each entry is at least rho; that floor makes the
chain uniformly ergodic under every policy, which is what the learner's
theory assumes. Thresholds are placed strictly inside the achievable range of
the constraint averages (computed exactly by policy iteration) so constraints
are neither vacuous nor infeasible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracle
from .cmdp import Cmdp, StateFeatures, induced_chain, stationary_distribution
from .policy import SoftmaxPolicy

RANDOM_ERGODIC = "random_ergodic"
BINDING_CHAIN = "binding_chain"
ONE_HOT = "one_hot"
RANDOM_PROJECTION = "random_projection"


@dataclass(frozen=True)
class EnvSpec:
    kind: str = RANDOM_ERGODIC
    n_states: int = 5
    n_actions: int = 2
    n_constraints: int = 1
    seed: int = 0
    min_transition_prob: float = 0.01
    cost_low: float = 0.0
    cost_high: float = 1.0

    def __post_init__(self):
        if self.kind not in (RANDOM_ERGODIC, BINDING_CHAIN):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.min_transition_prob <= 0:
            raise ValueError("min transition probability must be positive")
        if self.min_transition_prob * self.n_states >= 1:
            raise ValueError("infeasible floor: rho * n_states must be < 1")
        if not 0 <= self.cost_low < self.cost_high:
            raise ValueError("need 0 <= cost_low < cost_high")


def _floored_rows(rng: np.random.Generator, shape, n_states: int, rho: float) -> np.ndarray:
    """Dirichlet rows mixed with the uniform floor: every entry >= rho."""
    raw = rng.dirichlet(np.ones(n_states), size=shape)
    return rho + (1.0 - n_states * rho) * raw


def _stage_cost_extremes(model: Cmdp, stage_cost: np.ndarray) -> tuple[float, float]:
    """Exact [min, max] of the long-run average of stage_cost over all policies.

    Average-cost policy iteration over deterministic policies; the chain is
    ergodic under every policy by construction, so plain Howard iteration
    converges.
    """

    def solve(cost_table: np.ndarray) -> float:
        n = model.n_states
        policy = np.zeros(n, dtype=int)
        for _ in range(200):
            probs = np.zeros((n, model.n_actions))
            probs[np.arange(n), policy] = 1.0
            P = induced_chain(model, probs)
            mu = stationary_distribution(P)
            cbar = cost_table[np.arange(n), policy]
            L = float(mu @ cbar)
            V = np.linalg.solve(np.eye(n) - P + np.outer(np.ones(n), mu), cbar - L)
            Q = cost_table - L + np.einsum("sat,t->sa", model.transition, V)
            improved = Q.argmin(axis=1)
            if (improved == policy).all():
                return L
            policy = improved
        return L

    return solve(stage_cost), -solve(-stage_cost)


def random_ergodic_cmdp(spec: EnvSpec) -> Cmdp:
    """Random instance: floored-Dirichlet transitions, uniform costs, midpoint
    thresholds. Deterministic in the spec's seed."""
    rng = np.random.default_rng(spec.seed)
    S, A, N = spec.n_states, spec.n_actions, spec.n_constraints
    transition = _floored_rows(rng, (S, A), S, spec.min_transition_prob)
    cost = rng.uniform(spec.cost_low, spec.cost_high, (S, A))
    ccosts = rng.uniform(spec.cost_low, spec.cost_high, (N, S, A))
    model = Cmdp(
        transition=transition,
        cost=cost,
        constraint_costs=ccosts,
        thresholds=np.ones(N),
        cost_bound=spec.cost_high,
    )
    thresholds = np.empty(N)
    for k in range(N):
        lo, hi = _stage_cost_extremes(model, ccosts[k])
        thresholds[k] = 0.5 * (lo + hi)
    return Cmdp(
        transition=transition,
        cost=cost,
        constraint_costs=ccosts,
        thresholds=thresholds,
        cost_bound=spec.cost_high,
    )


def binding_chain_cmdp(n_states: int, seed: int = 0) -> tuple[Cmdp, dict]:
    """Ring chain with a cheap "shortcut" action that burns constraint budget.

    Action 0 (safe) walks the ring at high objective cost and almost no
    constraint cost; action 1 (shortcut) jumps toward state 0 at low objective
    cost but high constraint cost. The threshold is the midpoint of the exact
    achievable constraint range, so the unconstrained optimum violates it
    while all-safe policies satisfy it. The returned metadata exposes both
    margins.
    """
    if n_states < 3:
        raise ValueError("binding chain needs at least 3 states")
    rng = np.random.default_rng(seed)
    S, A = n_states, 2
    rho = 0.02
    transition = np.zeros((S, A, S))
    for s in range(S):
        safe = np.zeros(S)
        safe[(s + 1) % S] += 0.7
        safe[s] += 0.3
        shortcut = np.zeros(S)  # overlapping targets accumulate (s=0 and s=S-1)
        shortcut[0] += 0.6
        shortcut[(s + 1) % S] += 0.2
        shortcut[s] += 0.2
        transition[s, 0] = rho + (1 - S * rho) * safe
        transition[s, 1] = rho + (1 - S * rho) * shortcut
    cost = np.empty((S, A))
    ccost = np.empty((1, S, A))
    cost[:, 0] = rng.uniform(0.8, 1.0, S)  # safe: expensive objective
    cost[:, 1] = rng.uniform(0.0, 0.2, S)  # shortcut: cheap objective
    ccost[0, :, 0] = rng.uniform(0.0, 0.1, S)  # safe: almost free constraint
    ccost[0, :, 1] = rng.uniform(0.8, 1.0, S)  # shortcut: burns the budget
    model = Cmdp(transition, cost, ccost, thresholds=[1.0], cost_bound=1.0)

    lo, hi = _stage_cost_extremes(model, ccost[0])
    alpha = 0.5 * (lo + hi)
    model = Cmdp(transition, cost, ccost, thresholds=[alpha], cost_bound=1.0)

    # exact evaluations of the two reference policies
    def eval_policy(probs: np.ndarray) -> tuple[float, float]:
        mu = stationary_distribution(induced_chain(model, probs))
        weights = mu[:, None] * probs
        return float((weights * cost).sum()), float((weights * ccost[0]).sum())

    greedy = np.zeros((S, A))
    greedy[:, 1] = 1.0  # shortcut everywhere is the unconstrained optimum here
    all_safe = np.zeros((S, A))
    all_safe[:, 0] = 1.0
    _, g_greedy = eval_policy(greedy)
    _, g_safe = eval_policy(all_safe)
    meta = {
        "alpha": alpha,
        "constraint_range": (lo, hi),
        "greedy_violation_margin": g_greedy - alpha,
        "safe_feasibility_margin": alpha - g_safe,
    }
    return model, meta


def make_features(
    model: Cmdp,
    kind: str,
    d1: int,
    seed: int = 0,
    ensure_negative_definite: bool = True,
    max_retries: int = 100,
) -> StateFeatures:
    """State feature maps satisfying the norm and rank requirements.

    one_hot requires d1 == n_states. random_projection orthonormalizes a
    Gaussian matrix and rescales rows to max norm 1; draws whose TD matrix
    fails the negative-definiteness audit at theta = 0 are rejected and
    resampled (the audit is an assumption, not a construction, so rejection
    sampling enforces it honestly).
    """
    if d1 > model.n_states:
        raise ValueError("feature dimension cannot exceed the state count")
    if kind == ONE_HOT:
        if d1 != model.n_states:
            raise ValueError("one-hot features require d1 == n_states")
        return StateFeatures(matrix=np.eye(model.n_states))
    if kind != RANDOM_PROJECTION:
        raise ValueError(f"unknown feature kind {kind!r}")
    from .policy import tabular_sa_features  # audit needs some policy; uniform suffices

    x_sa = tabular_sa_features(model.n_states, model.n_actions)
    uniform = SoftmaxPolicy(sa_features=x_sa, theta=np.zeros(x_sa.shape[2]))
    for attempt in range(max_retries):
        rng = np.random.default_rng(seed + 1_000_003 * attempt)
        raw = rng.normal(size=(model.n_states, d1))
        q, _ = np.linalg.qr(raw)
        q = q[:, :d1]
        norms = np.linalg.norm(q, axis=1)
        feats = StateFeatures(matrix=q / norms.max())
        if not ensure_negative_definite:
            return feats
        fp = oracle.critic_fixed_point(model, uniform, np.zeros(model.n_constraints), feats)
        if fp.lambda_e > 0:
            return feats
    raise RuntimeError(f"no negative-definite feature draw in {max_retries} attempts")


def random_sa_features(
    n_states: int, n_actions: int, d: int, seed: int = 0, scale: float = 1.0
) -> np.ndarray:
    """Random state-action features with ||x(s,a)|| <= scale (policy plumbing)."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_states, n_actions, d))
    norms = np.linalg.norm(x, axis=2, keepdims=True)
    return x / norms.max() * scale


@dataclass
class AssumptionAudit:
    feature_norms_ok: bool
    feature_rank_ok: bool
    negative_definite_ok: bool
    min_lambda_e: float
    mixing_ok: bool
    mixing_rate: float


def audit_assumptions(
    model: Cmdp,
    features: StateFeatures,
    sa_features: np.ndarray,
    seed: int = 0,
    n_theta: int = 20,
    mixing_horizon: int = 60,
) -> AssumptionAudit:
    """Runnable audit of the standing assumptions on one instance.

    Checks feature norms and rank, negative definiteness of the TD matrix at
    theta = 0 plus random parameter draws, and geometric mixing of the uniform
    policy's chain.
    """
    from .cmdp import mixing_profile, validate_features

    feat = validate_features(features)
    norms_ok = not any("norm" in f for f in feat.failures)
    rank_ok = not any("rank" in f for f in feat.failures)

    rng = np.random.default_rng(seed)
    d = sa_features.shape[2]
    lam_min = np.inf
    for i in range(n_theta + 1):
        theta = np.zeros(d) if i == 0 else rng.normal(0.0, 1.0, d)
        pol = SoftmaxPolicy(sa_features=sa_features, theta=theta)
        fp = oracle.critic_fixed_point(model, pol, np.zeros(model.n_constraints), features)
        lam_min = min(lam_min, fp.lambda_e)

    uniform = np.full((model.n_states, model.n_actions), 1.0 / model.n_actions)
    P = induced_chain(model, uniform)
    mu = stationary_distribution(P)
    prof = mixing_profile(P, mu, mixing_horizon)
    return AssumptionAudit(
        feature_norms_ok=norms_ok,
        feature_rank_ok=rank_ok,
        negative_definite_ok=lam_min > 0,
        min_lambda_e=float(lam_min),
        mixing_ok=prof.mixes,
        mixing_rate=prof.rate,
    )
