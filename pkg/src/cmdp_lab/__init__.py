"""Desk-scale laboratory for three-timescale constrained (natural) critic-actor
learning on finite CMDPs with linear critic features.

The stochastic learner (`algorithm`) is paired with exact linear-algebra
oracles (`oracle`) so its tracked error quantities and convergence-rate
exponents can be measured and property-tested on seeded synthetic instances
(`envs`), under both the standard and sqrt-log step-size families
(`schedules`).
"""

from .algorithm import AlgorithmConfig, LearnerState, StepFailure, init, run, step
from .cmdp import Cmdp, StateFeatures, load_cmdp, save_cmdp, validate_cmdp
from .envs import EnvSpec, binding_chain_cmdp, make_features, random_ergodic_cmdp
from .metrics import MetricsLog, MetricsRecord, RateFit, fit_rate, windowed_mean
from .oracle import OracleSolution, solve
from .policy import SoftmaxPolicy
from .schedules import ScheduleSet, StepSchedule, optimal_exponents, validate

__all__ = [
    "AlgorithmConfig",
    "Cmdp",
    "EnvSpec",
    "LearnerState",
    "MetricsLog",
    "MetricsRecord",
    "OracleSolution",
    "RateFit",
    "ScheduleSet",
    "SoftmaxPolicy",
    "StateFeatures",
    "StepFailure",
    "StepSchedule",
    "binding_chain_cmdp",
    "fit_rate",
    "init",
    "load_cmdp",
    "make_features",
    "optimal_exponents",
    "random_ergodic_cmdp",
    "run",
    "save_cmdp",
    "solve",
    "step",
    "validate",
    "validate_cmdp",
    "windowed_mean",
]
