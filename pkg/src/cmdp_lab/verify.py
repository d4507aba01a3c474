"""Release-gate checks: the acceptance suite plus fast module audits.

Each check is a pure function returning a CheckResult; the registry is shared
by the CLI `verify` subcommand and the pytest acceptance module so there is a
single definition of "passing". Heavy simulation products are cached within
the process because several criteria measure different aspects of the same
runs (identical seeds and budgets by design).

Tolerances and instance dimensions are pinned here, not tuned at call sites.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import algorithm, envs, metrics, oracle, policy, schedules
from .cmdp import StateFeatures, induced_chain, load_cmdp, save_cmdp, stationary_distribution
from .policy import SoftmaxPolicy, reduced_tabular_sa_features, tabular_sa_features

# --- pinned experiment constants -------------------------------------------

N_ORACLE_INSTANCES = 50
ORACLE_STATES, ORACLE_ACTIONS, ORACLE_CONSTRAINTS = 10, 3, 2

RATE_SEEDS = list(range(10))
BINDING_STATES = 6
BINDING_HORIZON = 500_000
RATE_EVAL_EVERY = 100

STANDARD_RATE = dict(nu=0.5, sigma=0.52, beta=1.0, c_a=0.03, c_b=0.5, c_c=1.0, c_d=1.0)
MODIFIED_RATE = dict(nu=0.5, beta=1.0, c_a=0.012, c_b=0.5, c_c=1.0, c_d=1.0)

FROZEN_TD_HORIZON = 100_000
FISHER_HORIZON = 100_000
INVARIANT_HORIZON = 1_000_000


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


_CACHE: dict = {}


def _cached(key, builder):
    if key not in _CACHE:
        _CACHE[key] = builder()
    return _CACHE[key]


# --- shared experiment products ---------------------------------------------


def _oracle_instances():
    """50 seeded random instances with one-hot features and random (theta, gamma)."""

    def build():
        out = []
        for i in range(N_ORACLE_INSTANCES):
            spec = envs.EnvSpec(
                n_states=ORACLE_STATES,
                n_actions=ORACLE_ACTIONS,
                n_constraints=ORACLE_CONSTRAINTS,
                seed=1000 + i,
                min_transition_prob=0.01,
            )
            model = envs.random_ergodic_cmdp(spec)
            feats = StateFeatures(np.eye(ORACLE_STATES))
            x_sa = tabular_sa_features(ORACLE_STATES, ORACLE_ACTIONS)
            rng = np.random.default_rng(5000 + i)
            pol = SoftmaxPolicy(x_sa, rng.normal(0.0, 0.5, x_sa.shape[2]))
            gamma = rng.uniform(0.0, 1.0, ORACLE_CONSTRAINTS)
            out.append((model, feats, pol, gamma))
        return out

    return _cached("oracle_instances", build)


def _binding_setup():
    def build():
        model, meta = envs.binding_chain_cmdp(BINDING_STATES, seed=0)
        feats = envs.make_features(model, envs.RANDOM_PROJECTION, 4, seed=1)
        x_sa = reduced_tabular_sa_features(BINDING_STATES, 2)
        return model, meta, feats, x_sa

    return _cached("binding_setup", build)


def _rate_runs(mode: str):
    """10-seed C-NCA runs on the binding chain, standard or modified schedules."""

    def build():
        model, _, feats, x_sa = _binding_setup()
        if mode == "standard":
            sch = schedules.ScheduleSet.standard(
                STANDARD_RATE["nu"], STANDARD_RATE["sigma"], STANDARD_RATE["beta"],
                c_a=STANDARD_RATE["c_a"], c_b=STANDARD_RATE["c_b"],
                c_c=STANDARD_RATE["c_c"], c_d=STANDARD_RATE["c_d"],
            )
        else:
            sch = schedules.ScheduleSet.modified(
                MODIFIED_RATE["nu"], MODIFIED_RATE["beta"],
                c_a=MODIFIED_RATE["c_a"], c_b=MODIFIED_RATE["c_b"],
                c_c=MODIFIED_RATE["c_c"], c_d=MODIFIED_RATE["c_d"],
            )
        cfg = algorithm.AlgorithmConfig.for_variant("c-nca", sch, eval_every=RATE_EVAL_EVERY)
        return [
            algorithm.run(model, feats, x_sa, cfg, horizon=BINDING_HORIZON, seed=s)
            for s in RATE_SEEDS
        ]

    return _cached(("rate_runs", mode), build)


def _frozen_td_instance():
    def build():
        spec = envs.EnvSpec(
            n_states=5, n_actions=2, n_constraints=1, seed=11, min_transition_prob=0.02
        )
        model = envs.random_ergodic_cmdp(spec)
        feats = envs.make_features(model, envs.RANDOM_PROJECTION, 3, seed=2)
        x_sa = reduced_tabular_sa_features(5, 2)
        return model, feats, x_sa

    return _cached("frozen_td_instance", build)


# --- acceptance criteria -----------------------------------------------------


def check_oracle_exactness() -> CheckResult:
    """Fixed-point residuals, gradient vs finite differences, advantage centering."""
    start = time.monotonic()
    worst_resid = worst_grad = worst_center = 0.0
    for model, feats, pol, gamma in _oracle_instances():
        fp = oracle.critic_fixed_point(model, pol, gamma, feats)
        worst_resid = max(worst_resid, float(np.linalg.norm(fp.A @ fp.v_star + fp.b)))

        grad = oracle.exact_policy_gradient(model, pol, gamma)
        h = 1e-5
        fd = np.empty_like(grad)
        for i in range(len(grad)):
            e = np.zeros_like(grad)
            e[i] = h
            _, _, Lp = oracle.lagrangian_cost(model, pol.with_theta(pol.theta + e), gamma)
            _, _, Lm = oracle.lagrangian_cost(model, pol.with_theta(pol.theta - e), gamma)
            fd[i] = (Lp - Lm) / (2 * h)
        worst_grad = max(
            worst_grad, float(np.linalg.norm(grad - fd) / (1.0 + np.linalg.norm(grad)))
        )

        _, adv = oracle.differential_q_advantage(model, pol, gamma)
        worst_center = max(
            worst_center, float(np.abs((pol.prob_matrix() * adv).sum(axis=1)).max())
        )
    elapsed = time.monotonic() - start
    ok = worst_resid < 1e-9 and worst_grad < 1e-5 and worst_center < 1e-10 and elapsed < 30.0
    return CheckResult(
        "oracle_exactness",
        ok,
        f"residual {worst_resid:.2e} (<1e-9), grad rel err {worst_grad:.2e} (<1e-5), "
        f"centering {worst_center:.2e} (<1e-10), {elapsed:.1f}s (<30s)",
        elapsed,
    )


def check_compatible_feature_consistency() -> CheckResult:
    """m_bar at the fixed point equals the exact gradient with one-hot features."""
    start = time.monotonic()
    worst = 0.0
    for model, feats, pol, gamma in _oracle_instances():
        fp = oracle.critic_fixed_point(model, pol, gamma, feats)
        mb = oracle.m_bar(model, pol, fp.v_star, gamma, feats)
        grad = oracle.exact_policy_gradient(model, pol, gamma)
        worst = max(worst, float(np.linalg.norm(mb - grad)))
    elapsed = time.monotonic() - start
    return CheckResult(
        "compatible_feature_consistency",
        worst < 1e-8,
        f"max ||m_bar - grad|| = {worst:.2e} (<1e-8)",
        elapsed,
    )


def frozen_td_runs():
    """Critic-only (actor and Lagrange schedules zeroed) runs, cached."""

    def build():
        model, feats, x_sa = _frozen_td_instance()
        sch = schedules.ScheduleSet.standard(0.4, 0.5, 1.0, c_a=0.0, c_b=0.5, c_c=0.0, c_d=1.0)
        cfg = algorithm.AlgorithmConfig.for_variant("c-nca", sch, eval_every=RATE_EVAL_EVERY)
        return [
            algorithm.run(model, feats, x_sa, cfg, horizon=FROZEN_TD_HORIZON, seed=s)
            for s in RATE_SEEDS
        ]

    return _cached("frozen_td_runs", build)


def check_frozen_td_rate() -> CheckResult:
    """Critic-only runs: log-log slope of ||z||^2 over [1e3, 1e5] at most -0.3."""
    start = time.monotonic()
    slopes = [
        metrics.fit_rate(log.records, "z_sq", 1_000, FROZEN_TD_HORIZON).slope
        for log in frozen_td_runs()
    ]
    med = float(np.median(slopes))
    elapsed = time.monotonic() - start
    ok = med <= -0.3 and elapsed < 120.0
    return CheckResult(
        "frozen_td_rate",
        ok,
        f"median slope {med:.3f} (<= -0.3), {elapsed:.1f}s (<120s)",
        elapsed,
    )


def check_cnca_rate_trend() -> CheckResult:
    """Windowed critic error at t=1e5 at most half its value at t=1e4."""
    start = time.monotonic()
    ratios = []
    for log in _rate_runs("standard"):
        z4 = metrics.windowed_mean(log.records, "z_sq", 10_000)
        z5 = metrics.windowed_mean(log.records, "z_sq", 100_000)
        ratios.append(z4 / z5)
    med = float(np.median(ratios))
    elapsed = time.monotonic() - start
    ok = med >= 2.0 and elapsed < 300.0
    return CheckResult(
        "cnca_critic_rate_trend",
        ok,
        f"median windowed z^2 drop factor 1e4->1e5 = {med:.2f} (>= 2), {elapsed:.1f}s (<300s)",
        elapsed,
    )


def check_modified_schedule_direction() -> CheckResult:
    """Modified schedules do not lose to standard: final windowed z^2 within
    1.25x and fitted slope at least as negative minus 0.05 (same seeds/budget)."""
    start = time.monotonic()
    std = _rate_runs("standard")
    mod = _rate_runs("modified")
    z_std = [metrics.windowed_mean(r.records, "z_sq", BINDING_HORIZON) for r in std]
    z_mod = [metrics.windowed_mean(r.records, "z_sq", BINDING_HORIZON) for r in mod]
    s_std = [metrics.fit_rate(r.records, "z_sq", 1_000, 100_000).slope for r in std]
    s_mod = [metrics.fit_rate(r.records, "z_sq", 1_000, 100_000).slope for r in mod]
    ratio = float(np.median(np.array(z_mod) / np.array(z_std)))
    slope_gap = float(np.median(np.array(s_mod) - np.array(s_std)))
    ok = ratio <= 1.25 and slope_gap <= 0.05
    return CheckResult(
        "modified_schedule_direction",
        ok,
        f"median z^2 ratio mod/std {ratio:.3f} (<= 1.25), "
        f"median slope gap {slope_gap:.3f} (<= 0.05)",
        time.monotonic() - start,
    )


def check_constraint_satisfaction() -> CheckResult:
    """Final oracle constraint gap within 5% of the threshold on the binding chain."""
    start = time.monotonic()
    _, meta, _, _ = _binding_setup()
    alpha = meta["alpha"]
    gaps = [float(log.records[-1].gap[0]) for log in _rate_runs("standard")]
    med = float(np.median(gaps))
    ok = med <= 0.05 * alpha
    return CheckResult(
        "constraint_satisfaction",
        ok,
        f"median gap G1 - alpha = {med:.4f} (<= {0.05 * alpha:.4f}); "
        f"greedy policy margin was +{meta['greedy_violation_margin']:.3f}",
        time.monotonic() - start,
    )


def check_iterate_invariants() -> CheckResult:
    """1e6-step run: projection, clamp and Fisher SPD invariants never violated."""
    start = time.monotonic()
    model, _, feats, x_sa = _binding_setup()
    sch = schedules.ScheduleSet.standard(0.5, 0.52, 1.0, c_a=0.01, c_b=0.5, c_c=0.3, c_d=1.0)
    cfg = algorithm.AlgorithmConfig.for_variant("c-nca", sch, eval_every=10_000)
    log = algorithm.run(model, feats, x_sa, cfg, horizon=INVARIANT_HORIZON, seed=7)
    total = sum(log.violations.values())
    lam = np.linalg.eigvalsh(log.final_state.G)
    ok = bool(total == 0 and lam.min() > 0)
    return CheckResult(
        "iterate_invariants",
        ok,
        f"violations {log.violations} over {INVARIANT_HORIZON} steps; "
        f"final lambda_min(G) = {lam.min():.2e}",
        time.monotonic() - start,
    )


def check_fisher_recursion_target() -> CheckResult:
    """Frozen-theta Fisher recursion lands within 2e-2 Frobenius of the exact F."""
    start = time.monotonic()
    model, feats, x_sa = _frozen_td_instance()
    pol0 = SoftmaxPolicy(x_sa, np.zeros(x_sa.shape[2]))
    F = policy.exact_fisher(pol0, model)
    sch = schedules.ScheduleSet.standard(0.5, 0.52, 1.0, c_a=0.05, c_b=0.5, c_c=0.0, c_d=1.0)
    cfg = algorithm.AlgorithmConfig.for_variant(
        "c-nca", sch, eval_every=FISHER_HORIZON, freeze_theta=True
    )
    dummy = lambda s: metrics.MetricsRecord(
        s.t, 0.0, 0.0, 0.0, 1.0, 1.0, np.zeros(1), np.zeros(1), np.zeros(1)
    )
    errs = []
    for seed in RATE_SEEDS:
        log = algorithm.run(
            model, feats, x_sa, cfg, horizon=FISHER_HORIZON, seed=seed, evaluator=dummy
        )
        errs.append(float(np.linalg.norm(log.final_state.G - F)))
    med = float(np.median(errs))
    return CheckResult(
        "fisher_recursion_target",
        med < 2e-2,
        f"median ||G(1e5) - F||_F = {med:.2e} (< 2e-2)",
        time.monotonic() - start,
    )


def check_schedule_validator_examples() -> CheckResult:
    """The six labeled validator behaviors, including the 2-sigma rejection."""
    start = time.monotonic()
    outcomes = []

    s1 = schedules.ScheduleSet.standard(0.5, 0.55, 1.0)
    outcomes.append(("standard (0.5, 0.55, 1) passes", schedules.validate(s1).ok))

    s2 = schedules.ScheduleSet.standard(0.5, 0.9, 1.0)
    rep = schedules.validate(s2)
    failed_names = [c.name for c in rep.failures()]
    outcomes.append(("standard (0.5, 0.9, 1) fails 2σ < 3ν", not rep.ok and "2σ < 3ν" in failed_names))

    s3 = schedules.ScheduleSet.modified(0.5, 1.0)
    outcomes.append(("modified (0.5, 1) passes", schedules.validate(s3).ok))

    nu, sigma, beta = schedules.optimal_exponents("standard", delta=0.01)
    s4 = schedules.ScheduleSet.standard(nu, sigma, beta)
    outcomes.append(
        ("optimal standard delta=0.01 -> (0.5, 0.51, 1.0) passes",
         (nu, sigma, beta) == (0.5, 0.51, 1.0) and schedules.validate(s4).ok)
    )

    outcomes.append(
        ("optimal modified -> (0.5, 1.0)", schedules.optimal_exponents("modified") == (0.5, 1.0))
    )

    try:
        schedules.optimal_exponents("standard", delta=0.0)
        outcomes.append(("optimal standard delta=0 rejected", False))
    except ValueError:
        outcomes.append(("optimal standard delta=0 rejected", True))

    ok = all(passed for _, passed in outcomes)
    detail = "; ".join(f"{name}: {'ok' if p else 'FAIL'}" for name, p in outcomes)
    return CheckResult("schedule_validator_examples", ok, detail, time.monotonic() - start)


def check_determinism_and_serialization(tmp_dir=None) -> CheckResult:
    """Same seed gives byte-identical CSV logs; instances round-trip exactly."""
    import tempfile
    from pathlib import Path

    start = time.monotonic()
    model, _, feats, x_sa = _binding_setup()
    sch = schedules.ScheduleSet.standard(0.5, 0.52, 1.0, c_a=0.03, c_b=0.5, c_c=1.0, c_d=1.0)
    cfg = algorithm.AlgorithmConfig.for_variant("c-nca", sch, eval_every=100)
    log1 = algorithm.run(model, feats, x_sa, cfg, horizon=5_000, seed=42)
    log2 = algorithm.run(model, feats, x_sa, cfg, horizon=5_000, seed=42)
    same_bytes = metrics.records_to_csv(log1.records) == metrics.records_to_csv(log2.records)

    with tempfile.TemporaryDirectory(dir=tmp_dir) as td:
        path = Path(td) / "instance.json"
        save_cmdp(path, model, state_features=feats, sa_features=x_sa)
        loaded, lf, lsa = load_cmdp(path)
        roundtrip = (
            np.array_equal(loaded.transition, model.transition)
            and np.array_equal(loaded.cost, model.cost)
            and np.array_equal(loaded.constraint_costs, model.constraint_costs)
            and np.array_equal(loaded.thresholds, model.thresholds)
            and loaded.cost_bound == model.cost_bound
            and np.array_equal(lf.matrix, feats.matrix)
            and np.array_equal(lsa, x_sa)
        )
    ok = same_bytes and roundtrip
    return CheckResult(
        "determinism_and_serialization",
        ok,
        f"byte-identical reruns: {same_bytes}; exact round-trip: {roundtrip}",
        time.monotonic() - start,
    )


ACCEPTANCE_CHECKS = [
    check_oracle_exactness,
    check_compatible_feature_consistency,
    check_frozen_td_rate,
    check_cnca_rate_trend,
    check_modified_schedule_direction,
    check_constraint_satisfaction,
    check_iterate_invariants,
    check_fisher_recursion_target,
    check_schedule_validator_examples,
    check_determinism_and_serialization,
]


# --- fast module audits (spot checks of the property suite) ------------------


def check_stationary_power_oracle() -> CheckResult:
    start = time.monotonic()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        P = 0.02 + 0.8 * rng.dirichlet(np.ones(10), size=10)
        P /= P.sum(axis=1, keepdims=True)
        mu = stationary_distribution(P)
        ref = np.full(10, 0.1)
        for _ in range(1_000_000):
            nxt = ref @ P
            if np.abs(nxt - ref).max() < 1e-16:
                ref = nxt
                break
            ref = nxt
        worst = max(worst, float(np.abs(mu - ref).max()))
    return CheckResult(
        "stationary_power_oracle",
        worst < 1e-8,
        f"max gap to power-iteration oracle {worst:.2e} (<1e-8)",
        time.monotonic() - start,
    )


def check_score_identity() -> CheckResult:
    start = time.monotonic()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        x = rng.normal(size=(4, 3, 6))
        pol = SoftmaxPolicy(x, rng.normal(size=6))
        probs = pol.prob_matrix()
        psi = pol.score_table()
        worst = max(worst, float(np.abs(np.einsum("sa,sad->sd", probs, psi)).max()))
    return CheckResult(
        "score_identity", worst < 1e-10, f"max |E_pi psi| = {worst:.2e} (<1e-10)",
        time.monotonic() - start,
    )


def check_env_audits() -> CheckResult:
    start = time.monotonic()
    bad = []
    for seed in range(50):
        spec = envs.EnvSpec(n_states=6, n_actions=2, n_constraints=1, seed=seed)
        model = envs.random_ergodic_cmdp(spec)
        feats = envs.make_features(model, envs.RANDOM_PROJECTION, 3, seed=seed)
        x_sa = reduced_tabular_sa_features(6, 2)
        audit = envs.audit_assumptions(model, feats, x_sa, seed=seed, n_theta=3)
        if not (
            audit.feature_norms_ok
            and audit.feature_rank_ok
            and audit.negative_definite_ok
            and audit.mixing_ok
        ):
            bad.append(seed)
    return CheckResult(
        "env_assumption_audits",
        not bad,
        f"failing seeds: {bad or 'none'} of 50",
        time.monotonic() - start,
    )


MODULE_CHECKS = [
    check_stationary_power_oracle,
    check_score_identity,
    check_env_audits,
]


def run_all(include_module_checks: bool = True) -> list[CheckResult]:
    checks = list(ACCEPTANCE_CHECKS)
    if include_module_checks:
        checks += MODULE_CHECKS
    return [c() for c in checks]
