"""The three-timescale constrained (natural) critic-actor learner.

A single update executes, in order: the average-cost tracker, the TD error
with the pre-update cost estimate, the projected critic step, the (optionally
Fisher-preconditioned) actor step, the constraint-cost averages, the clamped
multiplier step using the pre-update averages, and the Fisher recursion.

Four variants share the loop. In the critic-actor arrangements ("actor_fast",
the default) the actor runs on the fast schedule a and the critic on the
slower b; the actor-critic arrangements ("critic_fast") swap which schedule
feeds those two updates. The constraint averages always follow the actor's
schedule, the Fisher recursion always uses a, the average-cost tracker always
uses d and the multipliers always use c.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import _kernel, metrics
from .cmdp import Cmdp, StateFeatures, validate_features
from .policy import SoftmaxPolicy
from .schedules import ScheduleSet, validate

ACTOR_FAST = "actor_fast"
CRITIC_FAST = "critic_fast"

VARIANTS = {
    "c-ac": (False, CRITIC_FAST),
    "c-nac": (True, CRITIC_FAST),
    "c-ca": (False, ACTOR_FAST),
    "c-nca": (True, ACTOR_FAST),
}

FACTORIZE = "factorize"
SHERMAN_MORRISON = "sherman_morrison"


@dataclass(frozen=True)
class AlgorithmConfig:
    schedules: ScheduleSet
    natural_gradient: bool = True
    timescale_order: str = ACTOR_FAST
    projection_radius: float = 100.0  # U_v
    multiplier_cap: float = 1000.0  # M
    fisher_init: float = 1.0  # p, G(0) = p I
    eval_every: int = 100
    cost_noise: float = 0.0
    inverse_update: str = FACTORIZE
    freeze_theta: bool = False
    fisher_cond_limit: float = 1e14

    def __post_init__(self):
        if self.timescale_order not in (ACTOR_FAST, CRITIC_FAST):
            raise ValueError(f"unknown timescale order {self.timescale_order!r}")
        if self.inverse_update not in (FACTORIZE, SHERMAN_MORRISON):
            raise ValueError(f"unknown inverse update {self.inverse_update!r}")
        if self.projection_radius <= 0:
            raise ValueError("projection radius must be positive")
        if self.multiplier_cap <= 0 or not np.isfinite(self.multiplier_cap):
            raise ValueError("multiplier cap must be finite and positive")
        if self.fisher_init <= 0:
            raise ValueError("Fisher initialization must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    @classmethod
    def for_variant(cls, name: str, schedules: ScheduleSet, **kwargs) -> "AlgorithmConfig":
        try:
            natural, order = VARIANTS[name.lower()]
        except KeyError:
            raise ValueError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None
        return cls(schedules=schedules, natural_gradient=natural, timescale_order=order, **kwargs)

    @property
    def variant(self) -> str:
        for name, (nat, order) in VARIANTS.items():
            if nat == self.natural_gradient and order == self.timescale_order:
                return name
        raise AssertionError


@dataclass
class LearnerState:
    """Full iterate of the learner plus its private random stream."""

    theta: np.ndarray
    v: np.ndarray
    L_avg: float
    U: np.ndarray
    gamma: np.ndarray
    G: np.ndarray
    t: int
    current_state: int
    rng: np.random.Generator
    G_inv: np.ndarray | None = None

    def copy(self) -> "LearnerState":
        return LearnerState(
            theta=self.theta.copy(),
            v=self.v.copy(),
            L_avg=self.L_avg,
            U=self.U.copy(),
            gamma=self.gamma.copy(),
            G=self.G.copy(),
            t=self.t,
            current_state=self.current_state,
            rng=copy.deepcopy(self.rng),
            G_inv=None if self.G_inv is None else self.G_inv.copy(),
        )


def project_v(v: np.ndarray, radius: float) -> np.ndarray:
    """Project onto the L2 ball of the given radius (the critic's compact set)."""
    if radius <= 0:
        raise ValueError("projection radius must be positive")
    norm = float(np.linalg.norm(v))
    if norm <= radius:
        return np.array(v, dtype=float)
    return np.asarray(v, dtype=float) * (radius / norm)


def project_gamma(y: float, cap: float) -> float:
    """Clamp a multiplier to [0, cap]."""
    if cap <= 0:
        raise ValueError("multiplier cap must be positive")
    return min(max(y, 0.0), cap)


def natural_direction(G: np.ndarray, psi: np.ndarray, delta: float) -> tuple[np.ndarray, float]:
    """Solve G x = delta * psi by Cholesky; also report lambda_min(G^{-1}).

    Raises np.linalg.LinAlgError when G is not numerically positive definite.
    """
    G = np.asarray(G, dtype=float)
    try:
        factor = scipy.linalg.cho_factor(G, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"Fisher estimate not positive definite: {exc}") from exc
    direction = scipy.linalg.cho_solve(factor, delta * np.asarray(psi, dtype=float))
    lam_min_inv = 1.0 / float(np.linalg.eigvalsh(G).max())
    return direction, lam_min_inv


def _schedule_roles(config: AlgorithmConfig):
    """Map the four schedules onto the six update roles of the kernel."""
    s = config.schedules
    if config.timescale_order == ACTOR_FAST:
        actor, critic = s.a, s.b
    else:
        actor, critic = s.b, s.a
    roles = [actor, critic, s.d, s.c, s.a, actor]
    kinds = np.array(
        [_kernel.KIND_POWER_LOG if r.kind == "power_log" else _kernel.KIND_POWER for r in roles],
        dtype=np.int64,
    )
    coefs = np.array([r.coefficient for r in roles], dtype=float)
    exps = np.array([r.exponent for r in roles], dtype=float)
    return kinds, coefs, exps


def _cumulative_transitions(model: Cmdp) -> np.ndarray:
    cum = np.cumsum(model.transition, axis=2)
    cum[:, :, -1] = 1.0
    return np.ascontiguousarray(cum)


def init(
    config: AlgorithmConfig,
    model: Cmdp,
    features: StateFeatures,
    sa_features: np.ndarray,
    seed: int,
) -> LearnerState:
    """Fresh learner state: zero iterates, G(0) = p I, s0 uniform over states."""
    report = validate(config.schedules)
    if not report.ok:
        names = ", ".join(c.name for c in report.failures())
        raise ValueError(f"schedule constraint violated: {names}")
    feat_report = validate_features(features)
    if not feat_report.ok:
        raise ValueError("invalid features: " + "; ".join(feat_report.failures))
    if features.n_states != model.n_states:
        raise ValueError("feature rows do not match the state count")
    sa_features = np.ascontiguousarray(sa_features, dtype=float)
    if sa_features.shape[:2] != (model.n_states, model.n_actions):
        raise ValueError("sa_features do not match the model dimensions")
    d = sa_features.shape[2]
    rng = np.random.default_rng(seed)
    s0 = int(rng.integers(model.n_states))
    p = config.fisher_init
    return LearnerState(
        theta=np.zeros(d),
        v=np.zeros(features.dim),
        L_avg=0.0,
        U=np.zeros(model.n_constraints),
        gamma=np.zeros(model.n_constraints),
        G=p * np.eye(d),
        t=0,
        current_state=s0,
        rng=rng,
        G_inv=np.eye(d) / p if config.inverse_update == SHERMAN_MORRISON else None,
    )


class StepFailure(RuntimeError):
    """The Fisher estimate became numerically singular at a known step."""

    def __init__(self, step: int):
        super().__init__(f"Fisher estimate numerically singular at step {step}")
        self.step = step


def _advance(
    state: LearnerState,
    model: Cmdp,
    features: StateFeatures,
    sa_features: np.ndarray,
    config: AlgorithmConfig,
    n_steps: int,
    trans_cum: np.ndarray,
    counters: np.ndarray,
) -> None:
    """Advance the state in place by n_steps kernel iterations."""
    kinds, coefs, exps = _schedule_roles(config)
    L_arr = np.array([state.L_avg])
    s_arr = np.array([state.current_state], dtype=np.int64)
    ginv = state.G_inv if state.G_inv is not None else np.empty((0, 0))
    status = _kernel.advance(
        state.rng,
        n_steps,
        state.t,
        state.theta,
        state.v,
        L_arr,
        state.U,
        state.gamma,
        state.G,
        ginv,
        s_arr,
        trans_cum,
        model.cost,
        model.constraint_costs,
        model.thresholds,
        features.matrix,
        sa_features,
        kinds,
        coefs,
        exps,
        config.natural_gradient,
        config.freeze_theta,
        config.inverse_update == SHERMAN_MORRISON,
        config.projection_radius,
        config.multiplier_cap,
        config.fisher_cond_limit,
        config.cost_noise,
        counters,
    )
    state.L_avg = float(L_arr[0])
    state.current_state = int(s_arr[0])
    if status != _kernel.STATUS_OK:
        state.t = int(status)
        raise StepFailure(int(status))
    state.t += n_steps


def step(
    state: LearnerState,
    model: Cmdp,
    features: StateFeatures,
    sa_features: np.ndarray,
    config: AlgorithmConfig,
) -> LearnerState:
    """One update of every recursion; returns a fresh state, input untouched."""
    out = state.copy()
    counters = np.zeros(3, dtype=np.int64)
    _advance(
        out,
        model,
        features,
        np.ascontiguousarray(sa_features, dtype=float),
        config,
        1,
        _cumulative_transitions(model),
        counters,
    )
    return out


def run(
    model: Cmdp,
    features: StateFeatures,
    sa_features: np.ndarray,
    config: AlgorithmConfig,
    horizon: int,
    seed: int,
    evaluator=None,
) -> metrics.MetricsLog:
    """Run the learner for `horizon` steps, evaluating every eval_every steps.

    The evaluator is a pure function of the iterate snapshot; by default the
    exact oracle measures the tracked error quantities. Records are taken at
    step counts 0, eval_every, 2*eval_every, ...; the final state reflects all
    `horizon` steps. Fully deterministic given the seed.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    sa_features = np.ascontiguousarray(sa_features, dtype=float)
    state = init(config, model, features, sa_features, seed)
    if evaluator is None:
        evaluator = metrics.make_oracle_evaluator(model, features, sa_features)
    if horizon == 0:
        return metrics.MetricsLog(records=[], lambda_min_g_inv=[], violations={}, final_state=state)
    trans_cum = _cumulative_transitions(model)
    counters = np.zeros(3, dtype=np.int64)

    records = [evaluator(state)]
    lam_trail = [1.0 / float(np.linalg.eigvalsh(state.G).max())]
    done = 0
    try:
        while done < horizon:
            chunk = min(config.eval_every, horizon - done)
            _advance(state, model, features, sa_features, config, chunk, trans_cum, counters)
            done += chunk
            if done % config.eval_every == 0:
                records.append(evaluator(state))
                lam_trail.append(1.0 / float(np.linalg.eigvalsh(state.G).max()))
    except StepFailure as exc:
        raise StepFailure(exc.step) from exc
    # final G certificate (all earlier ones are checked inside the kernel)
    np.linalg.cholesky(state.G)
    return metrics.MetricsLog(
        records=records,
        lambda_min_g_inv=lam_trail,
        violations={
            "critic_norm": int(counters[0]),
            "multiplier_range": int(counters[1]),
            "fisher_symmetry": int(counters[2]),
        },
        final_state=state,
    )


def policy_of(state: LearnerState, sa_features: np.ndarray) -> SoftmaxPolicy:
    """The softmax policy at the state's current actor parameters."""
    return SoftmaxPolicy(sa_features=sa_features, theta=state.theta)
